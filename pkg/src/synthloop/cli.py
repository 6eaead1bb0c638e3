"""Command-line entry points, one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkSpec
from .dataset import BACKGROUND, mix
from .detector import evaluate, train_detector
from .diagnostics import (
    average_confusion,
    pca_leakage,
    ratio_sweep,
    render_confusion_png,
    render_pca_png,
    save_sweep_table,
    size_sweep,
)
from .errors import SynthloopError, ValidationError
from .modification import ModificationSpec
from .pipeline import Workspace, WorkbenchConfig
from .session import Session
from .xai import aggregate, kernel_shap, make_grid, overlay_mask, save_aggregated, save_overlay_png


def _load_config(args) -> WorkbenchConfig:
    if getattr(args, "config", None):
        cfg = WorkbenchConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg = WorkbenchConfig()
    if getattr(args, "seed", None) is not None:
        cfg.base_seed = args.seed
    return cfg


def cmd_init(args) -> int:
    ws = Workspace(args.workdir)
    config = _load_config(args)
    spec = BenchmarkSpec()
    if args.benchmark != "default":
        raise ValidationError(f"unknown benchmark {args.benchmark!r}", field="benchmark")
    ws.init(config, spec)
    Session(ws).start()
    print(f"initialized workspace at {ws.root}; session at Train, version v0")
    return 0


def cmd_render_dataset(args) -> int:
    ws = Workspace(args.workdir)
    config = ws.load_config()
    if args.keep_frames:
        config.keep_frames = True
    manifest = ws.regenerate(args.version, config)
    print(f"rendered {len(manifest.records)} samples for {args.version}")
    return 0


def cmd_train(args) -> int:
    ws = Workspace(args.workdir)
    config = ws.load_config()
    seeds = [args.seed] if args.seed is not None else list(config.seeds)
    for seed in seeds:
        info = ws.train_run(args.version, seed, config)
        print(f"{args.version} seed {seed}: mAP50={info['map50']:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    ws = Workspace(args.workdir)
    config = ws.load_config()
    maps, mats = [], []
    order = None
    for seed in config.seeds:
        maps.append(ws.load_metrics(args.version, seed)["map50"])
        m, order = ws.load_confusion(args.version, seed)
        mats.append(m)
        print(f"seed {seed}: mAP50={maps[-1]:.4f}")
    avg = average_confusion(mats)
    print(f"mean mAP50 = {float(np.mean(maps)):.4f}")
    out = ws.runs_dir / args.version / "avg_confusion.png"
    render_confusion_png(avg, order, out, title=f"{args.version} (avg over {len(maps)} seeds)")
    print(f"wrote {out}")
    return 0


def cmd_explain(args) -> int:
    ws = Workspace(args.workdir)
    config = ws.load_config()
    classes = list(ws.classes())
    if not 0 <= args.class_index < len(classes):
        raise ValidationError(f"class index {args.class_index} out of range", field="class")
    cls = classes[args.class_index]
    model = ws.load_model(args.version, config.seeds[0])
    test = ws.load_dataset("real_test")
    images = ws.load_sample_images(test)
    predictions = {r.path: r for r in ws.load_predictions(args.version, config.seeds[0])}
    width = config.diagnose_bin_width
    rows, cols = config.shap_grid
    backgrounds = [images[i] for i, r in enumerate(test.records) if r.class_id == BACKGROUND]
    if not backgrounds:
        raise ValidationError("no background samples available for masking")
    backgrounds = backgrounds[: config.shap_backgrounds]
    n_masks = args.n_masks or config.shap_masks

    maps = []
    for i, rec in enumerate(test.records):
        if rec.class_id != cls or rec.bbox is None:
            continue
        if not (args.bin <= rec.orientation % 360.0 < args.bin + width):
            continue
        pred = predictions.get(rec.path)
        if pred is None or pred.pred_class != cls:
            continue
        x, y, w, h = (int(round(v)) for v in rec.bbox)
        if w < cols or h < rows:
            continue
        grid = make_grid((x, y, w, h), rows, cols)
        maps.append(
            kernel_shap(
                model, images[i], args.class_index, grid, backgrounds,
                n_masks=n_masks, seed=config.base_seed, sample_id=rec.path, sample_bbox=rec.bbox,
            )
        )
        if len(maps) >= config.shap_samples:
            break
    if not maps:
        raise ValidationError(f"no correctly classified {cls} samples in bin [{args.bin}, {args.bin + width})")
    agg = aggregate(maps, image_shape=images[0].shape)
    out_prefix = ws.root / "maps" / f"{cls}_bin{int(args.bin):03d}_{args.version}"
    save_aggregated(agg, out_prefix)
    representative = images[[i for i, r in enumerate(test.records) if r.path == maps[0].sample_id][0]]
    save_overlay_png(overlay_mask(agg, image=representative), str(out_prefix) + "_overlay.png")
    print(f"aggregated {len(maps)} samples -> {out_prefix}.bin/.txt and overlay PNG")
    return 0


def cmd_diagnose(args) -> int:
    from .session import diagnose

    ws = Workspace(args.workdir)
    config = ws.load_config()
    src, dst = args.pair.split(",")
    target = {"source": src, "predicted": dst, "count": 0.0, "override": True}
    out = ws.root / "diagnostics-cli" / f"{src}_as_{dst}_{args.version}"
    bundle = diagnose(ws, args.version, target, config, out)
    print(f"bundle with {len(bundle['bins'])} bin(s) at {out}")
    if bundle.get("warning"):
        print(f"warning: {bundle['warning']}")
    return 0


def cmd_modify(args) -> int:
    ws = Workspace(args.workdir)
    specs = [ModificationSpec.from_json(line) for line in Path(args.specs).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not specs:
        raise ValidationError("spec file is empty", field="specs")
    store = ws.version_store
    label = store.apply(args.parent, specs)
    print(f"created version {label} from {args.parent}")
    return 0


def cmd_loop_step(args) -> int:
    ws = Workspace(args.workdir)
    session = Session(ws)
    specs = None
    if args.specs:
        specs = [
            ModificationSpec.from_json(line)
            for line in Path(args.specs).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    override = tuple(args.override.split(",")) if args.override else None
    state = session.run_one_step(specs=specs, override=override)
    if state.step == "Done":
        print(f"DONE ({state.done_reason})")
    else:
        print(f"session at {state.step} (version {state.active_version}, iteration {state.iteration})")
    return 0


def cmd_sweep_ratio(args) -> int:
    ws = Workspace(args.workdir)
    config = ws.load_config()
    ratios = [float(r) for r in args.ratios.split(",")]
    rows = ratio_sweep(
        ws.load_dataset("real_train"),
        ws.load_dataset(f"syn_{args.version}"),
        ws.load_dataset("real_test"),
        ratios,
        args.total,
        list(config.seeds),
        config.detector_config(),
        ws.classes(),
        root=ws.root,
    )
    out = ws.root / "reports" / "ratio_sweep.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_sweep_table(rows, out, "ratio")
    for row in rows:
        print(f"ratio {row.value:g}: mean mAP50 = {row.mean_map50:.4f}")
    return 0


def cmd_sweep_size(args) -> int:
    ws = Workspace(args.workdir)
    config = ws.load_config()
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = size_sweep(
        ws.load_dataset("real_train"),
        ws.load_dataset(f"syn_{args.version}"),
        ws.load_dataset("real_test"),
        sizes,
        list(config.seeds),
        config.detector_config(),
        ws.classes(),
        ratio=args.ratio,
        root=ws.root,
    )
    out = ws.root / "reports" / "size_sweep.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_sweep_table(rows, out, "size")
    for row in rows:
        print(f"size {int(row.value)}: mean mAP50 = {row.mean_map50:.4f}")
    return 0


def cmd_pca_check(args) -> int:
    from .dataset import load_manifest

    ws = Workspace(args.workdir)
    orbit = ws.load_dataset("orbit")
    images = ws.load_sample_images(orbit)

    class Item:
        def __init__(self, image, bbox, class_id):
            self.image, self.bbox, self.class_id = image, bbox, class_id

    items = [Item(images[i], r.bbox, r.class_id) for i, r in enumerate(orbit.records)]
    boxed = [it for it in items if it.bbox is not None]
    striped_train = [it for i, it in enumerate(boxed) if i % 10 == 0]
    striped_test = [it for i, it in enumerate(boxed) if i % 10 != 0]
    ranges = ws.orientation_ranges()
    orient = [r.orientation for r in orbit.records if r.bbox is not None]
    disjoint_train = [it for it, o in zip(boxed, orient) if ranges.train.contains(o)]
    disjoint_test = [it for it, o in zip(boxed, orient) if ranges.test.contains(o)]
    striped = pca_leakage(striped_train, striped_test)
    disjoint = pca_leakage(disjoint_train, disjoint_test)
    out_dir = ws.root / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    render_pca_png(striped, out_dir / "pca_striped.png", title="striped 1-in-10 split")
    render_pca_png(disjoint, out_dir / "pca_disjoint.png", title="disjoint orientation split")
    print(f"striped overlap score:  {striped.overlap_score:.3f}")
    print(f"disjoint overlap score: {disjoint.overlap_score:.3f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import make_app

    app = make_app(args.workdir)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthloop", description="saliency-guided synthetic data workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--workdir", required=True, help="workspace directory")
        p.add_argument("--seed", type=int, default=None, help="base seed override")
        p.add_argument("--config", default=None, help="path to a WorkbenchConfig JSON file")
        p.set_defaults(fn=fn)
        return p

    p = add("init", cmd_init, help="build benchmark assets, plans, datasets and a session")
    p.add_argument("--benchmark", default="default")

    p = add("render-dataset", cmd_render_dataset, help="render the synthetic split for a mesh version")
    p.add_argument("--version", default="v0")
    p.add_argument("--keep-frames", action="store_true")

    p = add("train", cmd_train, help="train detector seed(s) for a version")
    p.add_argument("--version", default="v0")

    p = add("evaluate", cmd_evaluate, help="summarize per-seed metrics for a version")
    p.add_argument("--version", default="v0")

    p = add("explain", cmd_explain, help="aggregated saliency map for a class/orientation bin")
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--bin", type=float, required=True)
    p.add_argument("--n-masks", type=int, default=None)
    p.add_argument("--version", default="v0")

    p = add("diagnose", cmd_diagnose, help="saliency triptych bundle for a confusion pair")
    p.add_argument("--pair", required=True, help="source,predicted class names")
    p.add_argument("--version", default="v0")

    p = add("modify", cmd_modify, help="apply modification specs to a mesh version")
    p.add_argument("--parent", default="v0")
    p.add_argument("--specs", required=True, help="file with one ModificationSpec JSON per line")

    p = add("loop-step", cmd_loop_step, help="advance the session one state-machine step")
    p.add_argument("--override", default=None, help="target override 'source,predicted'")
    p.add_argument("--specs", default=None, help="modification specs for the Modify step")

    p = add("sweep-ratio", cmd_sweep_ratio, help="mAP50 vs real:synthetic ratio")
    p.add_argument("--ratios", default="0.05,0.5,1.0")
    p.add_argument("--total", type=int, default=900)
    p.add_argument("--version", default="v0")

    p = add("sweep-size", cmd_sweep_size, help="mAP50 vs total dataset size")
    p.add_argument("--sizes", default="450,900,1800")
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--version", default="v0")

    add("pca-check", cmd_pca_check, help="striped vs disjoint split leakage scores")

    p = add("serve", cmd_serve, help="run the local HTTP service")
    p.add_argument("--port", type=int, default=8008)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SynthloopError as exc:
        field = f" (field: {exc.field})" if exc.field else ""
        print(f"error {exc.code}: {exc.message}{field}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
