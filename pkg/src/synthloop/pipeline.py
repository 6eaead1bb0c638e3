"""Workspace orchestration: benchmark assets, render plans, datasets, runs.

A workspace directory is the unit every CLI command and the service operate
on.  Render plans are fixed when the workspace is initialized and shared by
every mesh version, so regenerating a modified version changes only the
pixels its edit touches.  All sample paths inside manifests are relative to
the workspace root.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkBundle, BenchmarkSpec, make_benchmark
from .dataset import (
    DatasetManifest,
    IntervalSet,
    OrientationRanges,
    SampleRecord,
    crop_and_resize,
    load_manifest,
    mix,
    save_manifest,
    save_sample_png,
)
from .detector import (
    DetectorConfig,
    EvaluationResult,
    PredictionRecord,
    TinyVehicleDetector,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_detector,
)
from .errors import NotFoundError, ValidationError
from .modification import VersionStore
from .renderer import airy_kernel, render_frame
from .scene import SceneConfig, save_mesh
from .dataset import load_images

ROLE_IDS = {"train": 0, "test": 1, "synthetic": 2, "orbit": 3}


@dataclass
class WorkbenchConfig:
    """Desk-scale defaults; everything an operator might tune in one place."""

    train_frames: int = 900
    synthetic_frames: int = 900
    test_frames: int = 600
    orbit_frames: int = 360
    background_frames: int = 72
    crops_per_frame: int = 1
    ranges: tuple[float, ...] = (1000.0, 1500.0, 2000.0)
    look_jitter: tuple[float, float] = (2.0, 2.5)
    mix_ratio: float = 0.5
    mix_total: int = 1800
    base_seed: int = 0
    keep_frames: bool = False
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    epochs: int = 40
    lr: float = 0.02
    batch_size: int = 64
    target_map50: float = 0.95
    max_iterations: int = 5
    shap_masks: int = 1000
    shap_samples: int = 50
    shap_grid: tuple[int, int] = (8, 16)
    shap_backgrounds: int = 16
    diagnose_bin_width: float = 5.0
    min_bin_misclassified: int = 5
    orbit_class: str = "boxtruck"

    def validate(self) -> None:
        if not 0.0 < self.target_map50 <= 1.0:
            raise ValidationError("target_map50 must lie in (0, 1]", field="target_map50")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ValidationError("mix_ratio must lie in [0, 1]", field="mix_ratio")
        if not self.seeds:
            raise ValidationError("need at least one training seed", field="seeds")
        if min(self.train_frames, self.synthetic_frames, self.test_frames) <= 0:
            raise ValidationError("frame counts must be positive")

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(epochs=self.epochs, lr=self.lr, batch_size=self.batch_size)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "WorkbenchConfig":
        d = json.loads(text)
        for key in ("ranges", "seeds", "shap_grid", "look_jitter"):
            if key in d:
                d[key] = tuple(d[key])
        return WorkbenchConfig(**d)


@dataclass
class PlanEntry:
    class_id: str  # "background" entries render the empty scene
    orientation: float
    range_m: float
    index: int
    look_y: float = 0.0
    look_z: float = 0.0


@dataclass
class RenderPlan:
    role: str  # train | test | synthetic | orbit
    provenance: str  # real | synthetic
    entries: list[PlanEntry]

    def save(self, path) -> None:
        payload = {
            "role": self.role,
            "provenance": self.provenance,
            "entries": [asdict(e) for e in self.entries],
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @staticmethod
    def load(path) -> "RenderPlan":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return RenderPlan(
            role=d["role"],
            provenance=d["provenance"],
            entries=[PlanEntry(**e) for e in d["entries"]],
        )


def make_plan(
    role: str,
    classes: tuple[str, ...],
    intervals: IntervalSet,
    n_frames: int,
    ranges: tuple[float, ...],
    seed: int,
    background_frames: int = 0,
    look_jitter: tuple[float, float] = (0.0, 0.0),
) -> RenderPlan:
    """Round-robin (class, range) assignment with seeded uniform orientations.

    ``background_frames`` extra empty-scene entries supply negative samples
    and the masking background pool; look jitter moves vehicles around the
    frame so random crops see them at varied positions.
    """
    rng = np.random.default_rng((seed, ROLE_IDS[role], 0xA11))
    entries = []
    combos = [(c, r) for c in classes for r in ranges]
    jy, jz = look_jitter
    for i in range(n_frames):
        cls, rng_m = combos[i % len(combos)]
        entries.append(
            PlanEntry(
                class_id=cls,
                orientation=intervals.sample(rng),
                range_m=rng_m,
                index=i,
                look_y=float(rng.uniform(-jy, jy)),
                look_z=float(rng.uniform(-jz, jz)),
            )
        )
    for k in range(background_frames):
        rng_m = ranges[k % len(ranges)]
        entries.append(
            PlanEntry(
                class_id="background",
                orientation=float(rng.uniform(0.0, 360.0)),
                range_m=rng_m,
                index=n_frames + k,
            )
        )
    return RenderPlan(role=role, provenance="real" if role in ("train", "test", "orbit") else "synthetic", entries=entries)


def make_orbit_plan(class_id: str, n_frames: int, range_m: float = 1000.0) -> RenderPlan:
    """Smooth full-circle sequence imitating consecutive video frames."""
    entries = [
        PlanEntry(class_id=class_id, orientation=360.0 * i / n_frames, range_m=range_m, index=i)
        for i in range(n_frames)
    ]
    return RenderPlan(role="orbit", provenance="real", entries=entries)


def frame_filename(e: PlanEntry, provenance: str, version: str) -> str:
    return f"{e.class_id}_{e.orientation:07.2f}_{e.range_m:g}_{provenance}_{version}_{e.index:05d}.png"


class Workspace:
    """Filesystem layout and operations for one workbench directory."""

    def __init__(self, root):
        self.root = Path(root)

    # --- paths ---------------------------------------------------------
    @property
    def benchmark_dir(self) -> Path:
        return self.root / "benchmark"

    @property
    def version_store(self) -> VersionStore:
        return VersionStore(self.benchmark_dir / "versions")

    @property
    def plans_dir(self) -> Path:
        return self.root / "plans"

    @property
    def datasets_dir(self) -> Path:
        return self.root / "datasets"

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    @property
    def session_dir(self) -> Path:
        return self.root / "session"

    def config_path(self) -> Path:
        return self.root / "config.json"

    def manifest_path(self, name: str) -> Path:
        return self.datasets_dir / name / "manifest.txt"

    def mix_manifest_path(self, version: str, seed: int) -> Path:
        return self.datasets_dir / "mixes" / f"train_{version}_s{seed}.txt"

    def run_dir(self, version: str, seed: int) -> Path:
        return self.runs_dir / version / f"seed{seed}"

    # --- setup ---------------------------------------------------------
    def load_config(self) -> WorkbenchConfig:
        if not self.config_path().exists():
            raise NotFoundError(f"no workspace at {self.root} (missing config.json)")
        return WorkbenchConfig.from_json(self.config_path().read_text(encoding="utf-8"))

    def classes(self) -> tuple[str, ...]:
        spec = json.loads((self.benchmark_dir / "spec.json").read_text(encoding="utf-8"))
        return tuple(spec["classes"])

    def orientation_ranges(self) -> OrientationRanges:
        return OrientationRanges()

    def init(self, config: WorkbenchConfig, spec: BenchmarkSpec | None = None) -> BenchmarkBundle:
        """Build assets, fix render plans and render every initial dataset."""
        config.validate()
        if self.config_path().exists():
            raise ValidationError(f"workspace already initialized at {self.root}")
        spec = spec or BenchmarkSpec()
        bundle = make_benchmark(spec, seed=config.base_seed)
        self.root.mkdir(parents=True, exist_ok=True)
        self.config_path().write_text(config.to_json(), encoding="utf-8")

        ref_dir = self.benchmark_dir / "reference"
        ref_dir.mkdir(parents=True, exist_ok=True)
        for cls, mesh in sorted(bundle.reference.items()):
            save_mesh(mesh, ref_dir / f"{cls}.mesh")
        self.version_store.init_root(bundle.editable)
        (self.benchmark_dir / "spec.json").write_text(
            json.dumps(
                {
                    "classes": list(spec.classes),
                    "confusable": [asdict(c) for c in spec.confusable],
                    "seed": config.base_seed,
                },
                indent=1,
            ),
            encoding="utf-8",
        )

        ranges = self.orientation_ranges()
        self.plans_dir.mkdir(parents=True, exist_ok=True)
        plans = {
            "train": make_plan(
                "train",
                spec.classes,
                ranges.train,
                config.train_frames,
                config.ranges,
                config.base_seed,
                background_frames=config.background_frames,
                look_jitter=config.look_jitter,
            ),
            "test": make_plan(
                "test",
                spec.classes,
                ranges.test,
                config.test_frames,
                config.ranges,
                config.base_seed,
                background_frames=config.background_frames,
                look_jitter=config.look_jitter,
            ),
            "synthetic": make_plan(
                "synthetic",
                spec.classes,
                ranges.synthetic,
                config.synthetic_frames,
                config.ranges,
                config.base_seed,
                background_frames=config.background_frames,
                look_jitter=config.look_jitter,
            ),
            "orbit": make_orbit_plan(config.orbit_class, config.orbit_frames),
        }
        for name, plan in plans.items():
            plan.save(self.plans_dir / f"{name}.json")

        reference = {cls: bundle.reference[cls] for cls in spec.classes}
        self.build_dataset("real_train", plans["train"], reference, "v0", config)
        self.build_dataset("real_test", plans["test"], reference, "v0", config)
        self.build_dataset("orbit", plans["orbit"], reference, "v0", config)
        self.regenerate("v0", config)
        return bundle

    # --- dataset construction ------------------------------------------
    def build_dataset(
        self,
        name: str,
        plan: RenderPlan,
        meshes,
        version: str,
        config: WorkbenchConfig,
    ) -> DatasetManifest:
        """Render the plan with the given meshes and persist cropped samples."""
        out = self.datasets_dir / name
        samples_dir = out / "samples"
        samples_dir.mkdir(parents=True, exist_ok=True)
        kernel = airy_kernel()
        records: list[SampleRecord] = []
        frames_dir = self.root / "frames" / name
        if config.keep_frames:
            frames_dir.mkdir(parents=True, exist_ok=True)
        for e in plan.entries:
            mesh = None if e.class_id == "background" else meshes[e.class_id]
            scene_config = SceneConfig(
                vehicle_orientation=e.orientation,
                range_m=e.range_m,
                look_offset=(e.look_y, e.look_z),
            )
            frame = render_frame(
                mesh,
                scene_config,
                plan.provenance,
                seed=(config.base_seed, ROLE_IDS[plan.role], e.index),
                kernel=kernel,
            )
            fname = frame_filename(e, plan.provenance, version)
            if config.keep_frames:
                save_sample_png(frame.image, frames_dir / fname)
            for k in range(config.crops_per_frame):
                crop_rng = np.random.default_rng((config.base_seed, ROLE_IDS[plan.role], e.index, 7, k))
                sample, origin = crop_and_resize(frame, crop_rng)
                sample_name = fname[:-4] + f"_c{k}.png"
                save_sample_png(sample.image, samples_dir / sample_name)
                records.append(
                    SampleRecord(
                        path=str((samples_dir / sample_name).relative_to(self.root)),
                        class_id=sample.class_id,
                        orientation=e.orientation,
                        provenance=plan.provenance,
                        version_label=version,
                        bbox=sample.bbox,
                        range_m=e.range_m,
                        frame_path=str(frames_dir / fname) if config.keep_frames else fname,
                        crop_origin=origin,
                    )
                )
        manifest = DatasetManifest(records=records, version_label=version, seed=config.base_seed)
        save_manifest(manifest, self.manifest_path(name))
        return manifest

    def regenerate(self, version: str, config: WorkbenchConfig | None = None) -> DatasetManifest:
        """Render the synthetic split for a mesh version under the fixed plan."""
        config = config or self.load_config()
        store = self.version_store
        meshes = store.load(version)  # raises NotFoundError for unknown versions
        plan = RenderPlan.load(self.plans_dir / "synthetic.json")
        return self.build_dataset(f"syn_{version}", plan, meshes, version, config)

    def load_dataset(self, name: str) -> DatasetManifest:
        path = self.manifest_path(name)
        if not path.exists():
            raise NotFoundError(f"dataset {name!r} not built")
        return load_manifest(path)

    def train_manifest(self, version: str, seed: int, config: WorkbenchConfig | None = None) -> DatasetManifest:
        """Mix the real pool with a version's synthetic pool for one seed."""
        config = config or self.load_config()
        real = self.load_dataset("real_train")
        syn = self.load_dataset(f"syn_{version}")
        mixed = mix(real, syn, ratio=config.mix_ratio, total=config.mix_total, seed=seed)
        path = self.mix_manifest_path(version, seed)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_manifest(mixed, path)
        return mixed

    # --- runs ------------------------------------------------------------
    def train_run(self, version: str, seed: int, config: WorkbenchConfig | None = None) -> dict:
        """Train one seed on a version's mix; persist checkpoint, log, metrics."""
        config = config or self.load_config()
        manifest = self.train_manifest(version, seed, config)
        model, log = train_detector(manifest, config.detector_config(), seed, self.classes(), root=self.root)
        rd = self.run_dir(version, seed)
        rd.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, rd / "checkpoint.bin")
        (rd / "train_log.txt").write_text(
            "\n".join(f"{e.epoch} {e.class_loss:.6f} {e.box_loss:.6f}" for e in log) + "\n",
            encoding="utf-8",
        )
        result = evaluate(model, self.load_dataset("real_test"), root=self.root)
        self._save_eval(rd, result)
        return {"version": version, "seed": seed, "map50": result.map50}

    def _save_eval(self, rd: Path, result: EvaluationResult) -> None:
        (rd / "metrics.json").write_text(
            json.dumps(
                {
                    "map50": result.map50,
                    "ap_per_class": result.ap_per_class,
                    "class_order": result.class_order,
                },
                indent=1,
            ),
            encoding="utf-8",
        )
        np.savetxt(rd / "confusion.txt", result.confusion, fmt="%d", header=" ".join(result.class_order))
        lines = [
            f"{r.path} {r.gt_class} {r.pred_class} {r.orientation:g} {r.confidence:.6f} {r.iou:.4f} {int(r.matched)} {r.range_m:g}"
            for r in result.records
        ]
        (rd / "predictions.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    def load_metrics(self, version: str, seed: int) -> dict:
        p = self.run_dir(version, seed) / "metrics.json"
        if not p.exists():
            raise NotFoundError(f"no metrics for {version} seed {seed}")
        return json.loads(p.read_text(encoding="utf-8"))

    def load_confusion(self, version: str, seed: int) -> tuple[np.ndarray, list[str]]:
        p = self.run_dir(version, seed) / "confusion.txt"
        if not p.exists():
            raise NotFoundError(f"no confusion matrix for {version} seed {seed}")
        header = p.read_text(encoding="utf-8").splitlines()[0].lstrip("# ").split()
        return np.loadtxt(p, dtype=np.int64).reshape(len(header), len(header)), header

    def load_predictions(self, version: str, seed: int) -> list[PredictionRecord]:
        p = self.run_dir(version, seed) / "predictions.txt"
        if not p.exists():
            raise NotFoundError(f"no predictions for {version} seed {seed}")
        records = []
        for line in p.read_text(encoding="utf-8").splitlines():
            parts = line.split()
            if len(parts) != 8:
                continue
            records.append(
                PredictionRecord(
                    path=parts[0],
                    gt_class=parts[1],
                    pred_class=parts[2],
                    orientation=float(parts[3]),
                    confidence=float(parts[4]),
                    iou=float(parts[5]),
                    matched=bool(int(parts[6])),
                    range_m=float(parts[7]),
                )
            )
        return records

    def load_model(self, version: str, seed: int) -> TinyVehicleDetector:
        p = self.run_dir(version, seed) / "checkpoint.bin"
        if not p.exists():
            raise NotFoundError(f"no checkpoint for {version} seed {seed}")
        return load_checkpoint(p)

    def load_sample_images(self, manifest: DatasetManifest) -> np.ndarray:
        return load_images(manifest, self.root)

    def sample_view(self, record: SampleRecord, role: str = "test"):
        """Reconstruct the scene geometry a sample was rendered under."""
        from .modification import SampleView

        if record.crop_origin is None or not record.frame_path:
            raise ValidationError(f"sample {record.path} lacks rendering provenance")
        index = int(Path(record.frame_path).stem.split("_")[5])
        plan = RenderPlan.load(self.plans_dir / f"{role}.json")
        entry = next(e for e in plan.entries if e.index == index)
        config = SceneConfig(
            vehicle_orientation=entry.orientation,
            range_m=entry.range_m,
            look_offset=(entry.look_y, entry.look_z),
        )
        return SampleView(config=config, crop_origin=tuple(record.crop_origin))
