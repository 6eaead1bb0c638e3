"""Crop/resize sample pipeline, orientation splits and dataset manifests.

Frames (512x640) are cropped to 256x512 at a uniformly random valid center and
bilinearly resampled by exactly 0.5 to 128x256.  Splits are defined by closed
orientation intervals; samples mix real and synthetic records at a declared
ratio.  Manifests are line-delimited text files with a small JSON sidecar
carrying rendering provenance (source frame, range, crop origin) so any sample
can be traced back to its scene configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .renderer import Frame

SAMPLE_SHAPE = (128, 256)
FRAME_SHAPE = (512, 640)
CROP_SHAPE = (256, 512)
BACKGROUND = "background"
MIN_BBOX_SURVIVING_AREA = 0.25


def _norm_deg(a: float) -> float:
    return float(a) % 360.0


@dataclass(frozen=True)
class IntervalSet:
    """Union of closed degree intervals, normalized mod 360 (may wrap)."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "intervals", tuple((_norm_deg(a), _norm_deg(b)) for a, b in self.intervals)
        )

    def contains(self, deg: float) -> bool:
        d = _norm_deg(deg)
        for a, b in self.intervals:
            if a <= b:
                if a <= d <= b:
                    return True
            elif d >= a or d <= b:
                return True
        return False

    def segments(self) -> list[tuple[float, float]]:
        """Non-wrapping [a, b] segments covering the set."""
        out = []
        for a, b in self.intervals:
            if a <= b:
                out.append((a, b))
            else:
                out.extend([(a, 360.0), (0.0, b)])
        return sorted(out)

    def intersects(self, other: "IntervalSet") -> bool:
        for a0, b0 in self.segments():
            for a1, b1 in other.segments():
                if max(a0, a1) <= min(b0, b1):
                    return True
        return False

    def covers(self, other: "IntervalSet") -> bool:
        for a1, b1 in other.segments():
            pieces = [(a1, b1)]
            for a0, b0 in self.segments():
                nxt = []
                for pa, pb in pieces:
                    if b0 < pa or a0 > pb:
                        nxt.append((pa, pb))
                        continue
                    if pa < a0:
                        nxt.append((pa, a0))
                    if b0 < pb:
                        nxt.append((b0, pb))
                pieces = nxt
            if any(pb - pa > 1e-9 for pa, pb in pieces):
                return False
        return True

    def sample(self, rng: np.random.Generator) -> float:
        segs = self.segments()
        lengths = np.array([b - a for a, b in segs])
        k = int(rng.choice(len(segs), p=lengths / lengths.sum()))
        a, b = segs[k]
        return float(rng.uniform(a, b))


@dataclass(frozen=True)
class OrientationRanges:
    train: IntervalSet = IntervalSet(((-20.0, 20.0), (160.0, 200.0)))
    test: IntervalSet = IntervalSet(((70.0, 110.0), (250.0, 290.0)))
    synthetic: IntervalSet = IntervalSet(((50.0, 130.0), (230.0, 310.0)))

    def __post_init__(self):
        if self.train.intersects(self.test):
            raise ValidationError("train and test orientation ranges overlap")
        if not self.synthetic.covers(self.test):
            raise ValidationError("synthetic orientation range must cover the test range")

    def for_role(self, role: str) -> IntervalSet:
        try:
            return getattr(self, role)
        except AttributeError:
            raise ValidationError(f"unknown split role {role!r}", field="role") from None


@dataclass
class Sample:
    image: np.ndarray  # (128, 256) uint8
    bbox: tuple[float, float, float, float] | None
    class_id: str
    orientation: float
    provenance: str
    version_label: str

    def __post_init__(self):
        if self.image.shape != SAMPLE_SHAPE:
            raise ValidationError(f"sample image must be {SAMPLE_SHAPE}, got {self.image.shape}")


@dataclass
class SampleRecord:
    path: str
    class_id: str
    orientation: float
    provenance: str
    version_label: str
    bbox: tuple[float, float, float, float] | None
    range_m: float = 0.0
    frame_path: str = ""
    crop_origin: tuple[int, int] | None = None  # (x0, y0) in frame pixels


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    version_label: str
    seed: int = 0
    ratio: float | None = None

    def counts(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        for r in self.records:
            key = (r.class_id, r.provenance)
            out[key] = out.get(key, 0) + 1
        return out

    def by_provenance(self, provenance: str) -> list[SampleRecord]:
        return [r for r in self.records if r.provenance == provenance]

    def validate(self) -> None:
        if self.ratio is not None:
            n = len(self.records)
            n_real = len(self.by_provenance("real"))
            if n and abs(n_real - self.ratio * n) > 1.0 + 1e-9:
                raise ValidationError(
                    f"declared ratio {self.ratio} does not match counts ({n_real}/{n})"
                )


def bilinear_halve(image: np.ndarray) -> np.ndarray:
    """Bilinear resampling at exactly scale 0.5 (2x2 block averages)."""
    h, w = image.shape
    blocks = image.reshape(h // 2, 2, w // 2, 2).astype(np.float64)
    return blocks.mean(axis=(1, 3))


def apply_crop(frame: Frame, x0: int, y0: int) -> Sample:
    """Deterministic crop at origin (x0, y0) followed by the 0.5 resample.

    The box is shifted and halved with the crop; if fewer than 25% of its
    area survives, the sample is relabeled background with no box.
    """
    if frame.image.shape != FRAME_SHAPE:
        raise ValidationError(f"frame must be {FRAME_SHAPE}, got {frame.image.shape}")
    ch, cw = CROP_SHAPE
    fh, fw = FRAME_SHAPE
    if not (0 <= x0 <= fw - cw and 0 <= y0 <= fh - ch):
        raise ValidationError(f"crop origin ({x0}, {y0}) leaves the frame")
    crop = frame.image[y0 : y0 + ch, x0 : x0 + cw]
    resized = np.round(bilinear_halve(crop)).astype(np.uint8)

    bbox = None
    class_id = BACKGROUND
    if frame.bbox is not None:
        bx, by, bw, bh = frame.bbox
        ix0, iy0 = max(bx, x0), max(by, y0)
        ix1, iy1 = min(bx + bw, x0 + cw), min(by + bh, y0 + ch)
        inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
        if bw * bh > 0 and inter / (bw * bh) >= MIN_BBOX_SURVIVING_AREA:
            bbox = ((ix0 - x0) / 2.0, (iy0 - y0) / 2.0, (ix1 - ix0) / 2.0, (iy1 - iy0) / 2.0)
            class_id = frame.class_id
    return Sample(
        image=resized,
        bbox=bbox,
        class_id=class_id,
        orientation=frame.orientation,
        provenance=frame.provenance,
        version_label=frame.version_label,
    )


def crop_and_resize(frame: Frame, seed_or_rng) -> tuple[Sample, tuple[int, int]]:
    """Random 256x512 crop resampled to 128x256; returns sample and crop origin.

    The crop center is uniform over positions keeping the crop inside the
    frame.
    """
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    ch, cw = CROP_SHAPE
    fh, fw = FRAME_SHAPE
    cy = int(rng.integers(ch // 2, fh - ch // 2 + 1))
    cx = int(rng.integers(cw // 2, fw - cw // 2 + 1))
    y0, x0 = cy - ch // 2, cx - cw // 2
    return apply_crop(frame, x0, y0), (x0, y0)


def build_split(records: list, ranges: OrientationRanges, role: str) -> DatasetManifest:
    """Keep exactly the records whose orientation lies in the role's intervals."""
    allowed = ranges.for_role(role)
    kept = [r for r in records if allowed.contains(r.orientation)]
    version = kept[0].version_label if kept else "v0"
    return DatasetManifest(records=list(kept), version_label=version)


def mix(
    real: DatasetManifest,
    synthetic: DatasetManifest,
    ratio: float = 0.5,
    total: int | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Draw round(ratio*total) real and the remaining synthetic records.

    Sampling is uniform without replacement under the seed.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError("ratio must be in [0, 1]", field="ratio")
    if total is None:
        total = len(real.records) + len(synthetic.records)
    n_real = int(round(ratio * total))
    n_syn = total - n_real
    if n_real > len(real.records):
        raise ValidationError(
            f"need {n_real} real samples, only {len(real.records)} available (short {n_real - len(real.records)})"
        )
    if n_syn > len(synthetic.records):
        raise ValidationError(
            f"need {n_syn} synthetic samples, only {len(synthetic.records)} available (short {n_syn - len(synthetic.records)})"
        )
    rng = np.random.default_rng(seed)
    ridx = rng.choice(len(real.records), size=n_real, replace=False)
    sidx = rng.choice(len(synthetic.records), size=n_syn, replace=False)
    records = [real.records[i] for i in ridx] + [synthetic.records[i] for i in sidx]
    manifest = DatasetManifest(
        records=records, version_label=synthetic.version_label, seed=seed, ratio=ratio
    )
    manifest.validate()
    return manifest


def _fmt_bbox_field(v: float) -> str:
    return f"{v:g}"


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = [
        f"# seed={manifest.seed}",
        f"# ratio={'' if manifest.ratio is None else manifest.ratio:g}" if manifest.ratio is not None else "# ratio=-",
        f"# version={manifest.version_label}",
        "# counts=" + ",".join(f"{c}:{p}:{n}" for (c, p), n in sorted(manifest.counts().items())),
    ]
    for r in manifest.records:
        if r.bbox is None:
            bbox = "- - - -"
        else:
            bbox = " ".join(_fmt_bbox_field(v) for v in r.bbox)
        lines.append(
            f"{r.path} {r.class_id} {r.orientation:g} {r.provenance} {r.version_label} {bbox}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = {
        "records": [
            {"range_m": r.range_m, "frame_path": r.frame_path, "crop_origin": r.crop_origin}
            for r in manifest.records
        ]
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar), encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    seed, ratio, version = 0, None, "v0"
    records: list[SampleRecord] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "seed":
                seed = int(value)
            elif key == "ratio" and value not in ("-", ""):
                ratio = float(value)
            elif key == "version":
                version = value
            continue
        parts = line.split()
        if len(parts) != 9:
            raise ValidationError(f"bad manifest record: {line!r}")
        bbox = None if parts[5] == "-" else tuple(float(v) for v in parts[5:9])
        records.append(
            SampleRecord(
                path=parts[0],
                class_id=parts[1],
                orientation=float(parts[2]),
                provenance=parts[3],
                version_label=parts[4],
                bbox=bbox,
            )
        )
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))["records"]
        for r, m in zip(records, meta):
            r.range_m = m.get("range_m", 0.0)
            r.frame_path = m.get("frame_path", "")
            co = m.get("crop_origin")
            r.crop_origin = tuple(co) if co else None
    manifest = DatasetManifest(records=records, version_label=version, seed=seed, ratio=ratio)
    manifest.validate()
    return manifest


def save_sample_png(image: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image, mode="L").save(path, format="PNG")


def load_sample_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def load_images(manifest: DatasetManifest, root: Path | None = None) -> np.ndarray:
    """Stack sample images referenced by a manifest into (n, 128, 256) uint8."""
    images = []
    for r in manifest.records:
        p = Path(r.path)
        if root is not None and not p.is_absolute():
            p = root / p
        images.append(load_sample_png(p))
    return np.stack(images) if images else np.zeros((0,) + SAMPLE_SHAPE, dtype=np.uint8)
