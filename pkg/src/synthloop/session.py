"""Persistent six-step curation loop with an append-only event log.

Steps cycle Train -> Evaluate -> (Done | SelectTarget -> Diagnose -> Modify ->
Regenerate -> Train).  Every transition appends one event; replaying the log
reproduces the state exactly, and a JSON snapshot makes resumption cheap.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import BACKGROUND
from .diagnostics import (
    OrientationBinReport,
    TargetMisclassification,
    average_confusion,
    orientation_fractions,
    rank_confusions,
    save_bin_report,
    select_target,
)
from .errors import NotFoundError, StateError, ValidationError
from .modification import ModificationSpec
from .pipeline import Workspace
from .xai import (
    SuperpixelGrid,
    aggregate,
    bilinear_resize,
    correlate_maps,
    kernel_shap,
    make_grid,
    overlay_mask,
    save_aggregated,
    save_overlay_png,
)

STEPS = ("Train", "Evaluate", "SelectTarget", "Diagnose", "Modify", "Regenerate", "Done")


@dataclass
class RunRecord:
    version: str
    seed: int
    map50: float
    confusion_path: str
    checkpoint_path: str
    duration_s: float


@dataclass
class SessionState:
    step: str = "Train"
    active_version: str = "v0"
    iteration: int = 0
    step_counter: int = 0
    runs: dict = field(default_factory=dict)  # version -> {seed(str): RunRecord dict}
    mean_map50: dict = field(default_factory=dict)  # version -> float
    target: dict | None = None
    last_bundle: str | None = None
    done_reason: str | None = None
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "SessionState":
        return SessionState(**json.loads(text))


class Session:
    """One writer per workspace; step methods enforce the state machine."""

    def __init__(self, workspace: Workspace):
        self.ws = workspace
        self.dir = workspace.session_dir
        self.state_path = self.dir / "state.json"
        self.events_path = self.dir / "events.log"
        self.state: SessionState | None = None
        if self.state_path.exists():
            self.state = SessionState.from_json(self.state_path.read_text(encoding="utf-8"))

    # --- persistence ----------------------------------------------------
    def _append_event(self, kind: str, payload: dict) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        record = {
            "ts": time.time(),
            "counter": self.state.step_counter,
            "event": kind,
            "payload": payload,
        }
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.state_path.write_text(self.state.to_json(), encoding="utf-8")

    def events(self) -> list[dict]:
        if not self.events_path.exists():
            return []
        return [json.loads(line) for line in self.events_path.read_text(encoding="utf-8").splitlines() if line]

    def replay(self) -> SessionState:
        """Reconstruct the state purely from the event log."""
        state = SessionState()
        for ev in self.events():
            _apply_event(state, ev["event"], ev["payload"])
        return state

    def _require(self, step: str) -> SessionState:
        if self.state is None:
            raise StateError("session not started")
        if self.state.step != step:
            raise StateError(f"operation requires step {step}, session is at {self.state.step}")
        return self.state

    # --- steps -----------------------------------------------------------
    def start(self) -> SessionState:
        if self.state is not None:
            raise StateError("session already started")
        config = self.ws.load_config()  # raises if workspace missing
        if not self.ws.version_store.exists("v0"):
            raise NotFoundError("benchmark assets missing: no v0 mesh version")
        if not self.ws.manifest_path("real_train").exists():
            raise NotFoundError("datasets missing: run workspace init first")
        self.state = SessionState(step="Train", active_version="v0")
        self.state.step_counter = 1
        self._append_event("start", {"seeds": list(config.seeds), "version": "v0"})
        return self.state

    def step_train(self) -> SessionState:
        state = self._require("Train")
        config = self.ws.load_config()
        version = state.active_version
        done = state.runs.get(version, {})
        new_records = []
        for seed in config.seeds:
            if str(seed) in done:
                continue  # resume semantics: only missing seeds run
            t0 = time.time()
            self.ws.train_run(version, seed, config)
            metrics = self.ws.load_metrics(version, seed)
            record = RunRecord(
                version=version,
                seed=seed,
                map50=metrics["map50"],
                confusion_path=str(self.ws.run_dir(version, seed) / "confusion.txt"),
                checkpoint_path=str(self.ws.run_dir(version, seed) / "checkpoint.bin"),
                duration_s=time.time() - t0,
            )
            new_records.append(asdict(record))
        payload = {"version": version, "records": new_records}
        _apply_event(state, "train", payload)
        self._append_event("train", payload)
        return state

    def step_evaluate(self) -> SessionState:
        state = self._require("Evaluate")
        config = self.ws.load_config()
        version = state.active_version
        recorded = state.runs.get(version, {})
        missing = [s for s in config.seeds if str(s) not in recorded]
        if missing:
            raise StateError(f"run records incomplete for {version}: missing seeds {missing}")
        mats = [self.ws.load_confusion(version, seed)[0] for seed in config.seeds]
        avg = average_confusion(mats)
        _, order = self.ws.load_confusion(version, config.seeds[0])
        avg_path = self.ws.runs_dir / version / "avg_confusion.txt"
        np.savetxt(avg_path, avg, fmt="%.3f", header=" ".join(order))
        mean_map = float(np.mean([recorded[str(s)]["map50"] for s in config.seeds]))
        if mean_map >= config.target_map50:
            nxt, reason = "Done", f"target reached: mean mAP50 {mean_map:.3f} >= {config.target_map50}"
        elif state.iteration >= config.max_iterations:
            nxt, reason = "Done", f"iteration limit {config.max_iterations} reached"
        else:
            nxt, reason = "SelectTarget", None
        payload = {"version": version, "mean_map50": mean_map, "next": nxt, "reason": reason}
        _apply_event(state, "evaluate", payload)
        self._append_event("evaluate", payload)
        return state

    def averaged_confusion(self, version: str | None = None) -> tuple[np.ndarray, list[str]]:
        config = self.ws.load_config()
        version = version or self.state.active_version
        mats = [self.ws.load_confusion(version, seed)[0] for seed in config.seeds]
        _, order = self.ws.load_confusion(version, config.seeds[0])
        return average_confusion(mats), order

    def step_select(self, override: tuple[str, str] | None = None) -> SessionState:
        state = self._require("SelectTarget")
        avg, order = self.averaged_confusion()
        if override is None:
            target = select_target(avg, order)
            if target is None:
                raise ValidationError("confusion matrix is diagonal: nothing to select")
            chosen = {"source": target.source, "predicted": target.predicted, "count": target.count, "override": False}
        else:
            src, dst = override
            vehicle = [c for c in order if c != BACKGROUND]
            if src == dst or src not in vehicle or dst not in vehicle:
                raise ValidationError(f"override must name two distinct vehicle classes, got {override}")
            count = float(avg[order.index(src), order.index(dst)])
            chosen = {"source": src, "predicted": dst, "count": count, "override": True}
        payload = {"target": chosen}
        _apply_event(state, "select", payload)
        self._append_event("select", payload)
        return state

    def step_diagnose(self) -> SessionState:
        state = self._require("Diagnose")
        config = self.ws.load_config()
        bundle_dir = self.dir / "diagnostics" / f"iter{state.iteration}"
        bundle = diagnose(self.ws, state.active_version, state.target, config, bundle_dir)
        payload = {"bundle": str(bundle_dir.relative_to(self.ws.root)), "warning": bundle.get("warning")}
        _apply_event(state, "diagnose", payload)
        self._append_event("diagnose", payload)
        return state

    def step_modify(self, specs: list[ModificationSpec]) -> SessionState:
        state = self._require("Modify")
        if not specs:
            payload = {"specs": [], "version": state.active_version}
            _apply_event(state, "modify", payload)
            self._append_event("modify", payload)
            return state
        for spec in specs:
            spec.validate()
        store = self.ws.version_store
        parent = state.active_version
        groups: list[list[ModificationSpec]] = []
        for spec in specs:
            if groups and groups[-1][0].new_version_label == spec.new_version_label:
                groups[-1].append(spec)
            else:
                groups.append([spec])
        for group in groups:
            parent = store.apply(parent, group)
        payload = {"specs": [s.to_json() for s in specs], "version": parent}
        _apply_event(state, "modify", payload)
        self._append_event("modify", payload)
        return state

    def step_regenerate(self) -> SessionState:
        state = self._require("Regenerate")
        manifest = self.ws.regenerate(state.active_version)
        payload = {"version": state.active_version, "samples": len(manifest.records)}
        _apply_event(state, "regenerate", payload)
        self._append_event("regenerate", payload)
        return state

    def run_one_step(self, specs=None, override=None) -> SessionState:
        """Advance exactly one state-machine step (CLI loop-step helper)."""
        if self.state is None:
            return self.start()
        step = self.state.step
        if step == "Train":
            return self.step_train()
        if step == "Evaluate":
            return self.step_evaluate()
        if step == "SelectTarget":
            return self.step_select(override)
        if step == "Diagnose":
            return self.step_diagnose()
        if step == "Modify":
            return self.step_modify(specs or [])
        if step == "Regenerate":
            return self.step_regenerate()
        raise StateError("session is Done")


def _apply_event(state: SessionState, kind: str, payload: dict) -> None:
    if kind == "start":
        state.step = "Train"
        state.active_version = payload["version"]
        state.step_counter = 1
        return
    state.step_counter += 1
    if kind == "train":
        version = payload["version"]
        bucket = state.runs.setdefault(version, {})
        for record in payload["records"]:
            bucket[str(record["seed"])] = record
        state.step = "Evaluate"
    elif kind == "evaluate":
        state.mean_map50[payload["version"]] = payload["mean_map50"]
        state.step = payload["next"]
        if payload["next"] == "Done":
            state.done_reason = payload["reason"]
    elif kind == "select":
        state.target = payload["target"]
        state.step = "Diagnose"
    elif kind == "diagnose":
        state.last_bundle = payload["bundle"]
        if payload.get("warning"):
            state.warnings.append(payload["warning"])
        state.step = "Modify"
    elif kind == "modify":
        if payload["specs"]:
            state.active_version = payload["version"]
            state.step = "Regenerate"
        else:
            state.step = "SelectTarget"
    elif kind == "regenerate":
        state.iteration += 1
        state.step = "Train"
    else:
        raise ValidationError(f"unknown event kind {kind!r}")


def _mean_patch(images, bboxes, grid_shape) -> np.ndarray:
    patches = []
    for img, bbox in zip(images, bboxes):
        x, y, w, h = (int(round(v)) for v in bbox)
        win = img[max(y, 0) : y + h, max(x, 0) : x + w].astype(np.float64)
        if win.size:
            patches.append(bilinear_resize(win, grid_shape))
    return np.mean(patches, axis=0) if patches else np.zeros(grid_shape)


def diagnose(ws: Workspace, version: str, target: dict, config, out_dir: Path) -> dict:
    """Produce the per-bin saliency bundle for the selected confusion.

    Uses the first seed's model.  For each orientation bin holding enough
    misclassified samples: aggregated maps for correct-source, the
    misclassification, and correct-predicted at its max-correlation bin,
    plus feature suggestions and the orientation-fraction report.

    Samples sit at random crop positions, so before aggregation each
    attribution grid is re-anchored at its box origin (maps become
    box-relative) and each bin is restricted to its most common range so the
    per-pixel counts align across samples.
    """
    from .diagnostics import suggest_features

    out_dir.mkdir(parents=True, exist_ok=True)
    src, dst = target["source"], target["predicted"]
    seed = config.seeds[0]
    model = ws.load_model(version, seed)
    test = ws.load_dataset("real_test")
    images = ws.load_sample_images(test)
    predictions = ws.load_predictions(version, seed)
    by_path = {r.path: r for r in predictions}
    classes = list(model.classes)

    backgrounds = [images[i] for i, r in enumerate(test.records) if r.class_id == BACKGROUND]
    if not backgrounds:
        raise ValidationError("test set has no background samples for masking")
    backgrounds = backgrounds[: config.shap_backgrounds]

    def bin_of(orientation: float) -> float:
        return (orientation % 360.0) // config.diagnose_bin_width * config.diagnose_bin_width

    groups: dict[str, dict[float, list[int]]] = {"mis": {}, "src_ok": {}, "dst_ok": {}}
    for i, rec in enumerate(test.records):
        pred = by_path.get(rec.path)
        if pred is None or rec.bbox is None:
            continue
        b = bin_of(rec.orientation)
        if rec.class_id == src and pred.pred_class == dst:
            groups["mis"].setdefault(b, []).append(i)
        elif rec.class_id == src and pred.pred_class == src:
            groups["src_ok"].setdefault(b, []).append(i)
        elif rec.class_id == dst and pred.pred_class == dst:
            groups["dst_ok"].setdefault(b, []).append(i)

    rows, cols = config.shap_grid

    def modal_range(indices: list[int]) -> float:
        counts: dict[float, int] = {}
        for i in indices:
            counts[test.records[i].range_m] = counts.get(test.records[i].range_m, 0) + 1
        return max(counts, key=counts.get)

    def shap_maps(indices: list[int], target_class: str, cap: int, range_m: float | None):
        maps = []
        for i in indices:
            if len(maps) >= cap:
                break
            rec = test.records[i]
            if range_m is not None and rec.range_m != range_m:
                continue
            x, y, w, h = (int(round(v)) for v in rec.bbox)
            if w < cols or h < rows:
                continue
            grid = make_grid((x, y, w, h), rows, cols)
            m = kernel_shap(
                model.confidence_scores,  # per-class scores keep shared features visible
                images[i],
                classes.index(target_class),
                grid,
                backgrounds,
                n_masks=config.shap_masks,
                seed=config.base_seed,
                sample_id=rec.path,
                sample_bbox=rec.bbox,
            )
            # Anchor at the box origin so counts align across crop positions.
            m.grid = SuperpixelGrid(bbox=(0, 0, w, h), rows=rows, cols=cols, labels=m.grid.labels)
            maps.append(m)
        return maps

    eligible = sorted(
        b for b, idx in groups["mis"].items() if len(idx) >= config.min_bin_misclassified
    )
    warning = None
    if not eligible:
        best = max(groups["mis"], key=lambda b: len(groups["mis"][b]), default=None)
        warning = (
            f"no orientation bin holds >= {config.min_bin_misclassified} misclassified samples"
            + (f" (best bin {best} has {len(groups['mis'][best])})" if best is not None else "")
        )

    range_filter = modal_range([i for idx in groups["mis"].values() for i in idx]) if groups["mis"] else None

    # Correct-predicted maps per bin, computed once and matched by correlation.
    dst_maps = {}
    for b, idx in sorted(groups["dst_ok"].items()):
        maps = shap_maps(idx, dst, config.shap_samples, range_filter)
        if maps:
            dst_maps[b] = aggregate(maps, image_shape=images[0].shape)

    bins_out = []
    for b in eligible:
        mis_maps = shap_maps(groups["mis"][b], dst, config.shap_samples, range_filter)
        src_maps = shap_maps(groups["src_ok"].get(b, []), src, config.shap_samples, range_filter)
        if not mis_maps or not src_maps or not dst_maps:
            continue
        agg_mis = aggregate(mis_maps, image_shape=images[0].shape)
        agg_src = aggregate(src_maps, image_shape=images[0].shape)
        best_bin, best_corr = None, -2.0
        for cb, agg in dst_maps.items():
            c = correlate_maps(agg_mis, agg, max_shift=4)
            if c > best_corr:
                best_bin, best_corr = cb, c
        agg_dst = dst_maps[best_bin]

        def bin_items(indices):
            sel = [
                i
                for i in indices
                if range_filter is None or test.records[i].range_m == range_filter
            ]
            return [images[i] for i in sel], [test.records[i].bbox for i in sel]

        mis_patch = _mean_patch(*bin_items(groups["mis"][b]), (32, 64))
        dst_patch = _mean_patch(*bin_items(groups["dst_ok"][best_bin]), (32, 64))
        suggestions = suggest_features(
            agg_src,
            agg_dst,
            agg_mis,
            mis_patch,
            dst_patch,
            source_class=src,
            predicted_class=dst,
            orientation_bin=b,
            pair_correlation=best_corr,
        )
        tagb = f"bin{int(b):03d}"
        rep_sets = {"src_correct": groups["src_ok"].get(b, []), "dst_correct": groups["dst_ok"][best_bin], "misclass": groups["mis"][b]}
        for name, agg in (("src_correct", agg_src), ("dst_correct", agg_dst), ("misclass", agg_mis)):
            save_aggregated(agg, out_dir / f"{tagb}_{name}")
            # Representative image anchored like the maps: the sample's box
            # crop pasted at the canvas origin.
            rep_canvas = np.zeros(images[0].shape, dtype=np.uint8)
            rep_idx = [
                i
                for i in rep_sets[name]
                if range_filter is None or test.records[i].range_m == range_filter
            ]
            if rep_idx:
                rec = test.records[rep_idx[0]]
                x, y, w, h = (int(round(v)) for v in rec.bbox)
                crop = images[rep_idx[0]][max(y, 0) : y + h, max(x, 0) : x + w]
                rep_canvas[: crop.shape[0], : crop.shape[1]] = crop
            save_overlay_png(overlay_mask(agg, image=rep_canvas), out_dir / f"{tagb}_{name}.png")
        bins_out.append(
            {
                "bin": b,
                "dst_bin": best_bin,
                "correlation": best_corr,
                "n_misclassified": len(groups["mis"][b]),
                "maps": {
                    "src_correct": f"{tagb}_src_correct",
                    "dst_correct": f"{tagb}_dst_correct",
                    "misclass": f"{tagb}_misclass",
                },
                "suggestions": [asdict(s) for s in suggestions],
            }
        )

    report = orientation_fractions(predictions, (src, dst), config.diagnose_bin_width)
    save_bin_report(report, out_dir / "orientation_fractions.txt")
    bundle = {
        "target": target,
        "version": version,
        "bins": bins_out,
        "orientation_report": "orientation_fractions.txt",
        "warning": warning,
    }
    (out_dir / "bundle.json").write_text(json.dumps(bundle, indent=1), encoding="utf-8")
    return bundle
