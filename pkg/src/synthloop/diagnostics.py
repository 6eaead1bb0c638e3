"""Decision aids: seed-averaged confusions, target picking, orientation bins,
common/unique feature suggestions, train/test leakage checks and data sweeps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import BACKGROUND, DatasetManifest, load_images, mix
from .detector import DetectorConfig, EvaluationResult, PredictionRecord, evaluate, train_detector
from .errors import ValidationError
from .xai import AggregatedSaliencyMap, NORMALIZED_GRID, bilinear_resize, normalized_window

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True)
class TargetMisclassification:
    source: str
    predicted: str
    count: float
    rank: int


def average_confusion(matrices: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of same-shaped confusion matrices (real-valued)."""
    if not matrices:
        raise ValidationError("no confusion matrices to average")
    first = np.asarray(matrices[0], dtype=np.float64)
    for m in matrices[1:]:
        if np.asarray(m).shape != first.shape:
            raise ValidationError("confusion matrices differ in shape")
    return np.mean([np.asarray(m, dtype=np.float64) for m in matrices], axis=0)


def rank_confusions(confusion: np.ndarray, class_order: list[str]) -> list[TargetMisclassification]:
    """Off-diagonal vehicle-pair entries ranked by count, ties by indices."""
    confusion = np.asarray(confusion, dtype=np.float64)
    if BACKGROUND in class_order:
        n = class_order.index(BACKGROUND)
    else:
        n = len(class_order)
    if n < 2:
        raise ValidationError("need at least two vehicle classes")
    entries = []
    for i in range(n):
        for j in range(n):
            if i != j and confusion[i, j] > 0:
                entries.append((i, j, float(confusion[i, j])))
    entries.sort(key=lambda e: (-e[2], e[0], e[1]))
    return [
        TargetMisclassification(source=class_order[i], predicted=class_order[j], count=c, rank=r)
        for r, (i, j, c) in enumerate(entries)
    ]


def select_target(confusion: np.ndarray, class_order: list[str]) -> TargetMisclassification | None:
    """Largest off-diagonal non-background cell, or None when diagonal."""
    ranked = rank_confusions(confusion, class_order)
    return ranked[0] if ranked else None


@dataclass
class OrientationBin:
    start: float
    correct: int
    misclassified: int

    @property
    def fraction(self) -> float:
        return self.misclassified / (self.correct + self.misclassified)


@dataclass
class OrientationBinReport:
    source: str
    predicted: str
    bin_width: float
    bins: list[OrientationBin]

    def total_counted(self) -> int:
        return sum(b.correct + b.misclassified for b in self.bins)


def orientation_fractions(
    records: list[PredictionRecord], pair: tuple[str, str], bin_width: float = 5.0
) -> OrientationBinReport:
    """Per-bin fraction M/(C+M) for the specific A-predicted-as-B confusion.

    C counts class-A samples predicted as A, M those predicted as B; samples
    predicted as any other class are not part of this report.  Bins with
    C + M = 0 are absent.
    """
    src, dst = pair
    if bin_width <= 0 or 360.0 % bin_width > 1e-9:
        raise ValidationError("bin width must evenly divide 360", field="bin_width")
    n_bins = int(round(360.0 / bin_width))
    correct = np.zeros(n_bins, dtype=np.int64)
    wrong = np.zeros(n_bins, dtype=np.int64)
    for r in records:
        if r.gt_class != src:
            continue
        b = int((r.orientation % 360.0) // bin_width)
        if r.pred_class == src:
            correct[b] += 1
        elif r.pred_class == dst:
            wrong[b] += 1
    bins = [
        OrientationBin(start=k * bin_width, correct=int(correct[k]), misclassified=int(wrong[k]))
        for k in range(n_bins)
        if correct[k] + wrong[k] > 0
    ]
    return OrientationBinReport(source=src, predicted=dst, bin_width=bin_width, bins=bins)


@dataclass
class FeatureSuggestion:
    kind: str  # "common" | "unique"
    owning_class: str
    orientation_bin: float
    cells: list[tuple[int, int]]  # (row, col) on the normalized grid
    saliency: float
    correlation: float
    similarity: float


def _normalized(agg: AggregatedSaliencyMap, grid_shape) -> np.ndarray:
    win = normalized_window(agg, grid_shape)
    mx = win.max()
    return win / mx if mx > 0 else win


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def _regions(candidates: np.ndarray) -> list[np.ndarray]:
    labeled, n = ndimage.label(candidates, structure=FOUR_CONNECTED)
    return [labeled == k for k in range(1, n + 1)]


def suggest_features(
    agg_a_correct: AggregatedSaliencyMap,
    agg_b_correct: AggregatedSaliencyMap,
    agg_a_as_b: AggregatedSaliencyMap,
    mean_patch_misclass: np.ndarray,
    mean_patch_b: np.ndarray,
    source_class: str,
    predicted_class: str,
    orientation_bin: float = 0.0,
    pair_correlation: float = 0.0,
    tau_similarity: float = 0.6,
    high: float = 0.5,
    low: float = 0.2,
    grid_shape=NORMALIZED_GRID,
) -> list[FeatureSuggestion]:
    """Common/unique feature candidates from the three aligned saliency maps.

    Common: cells high in both the misclassification map and the confused
    class's correct map, with similar image content (NCC over the region).
    Unique: cells high in the source class's correct map but low in the
    misclassification map at the same location.
    """
    na = _normalized(agg_a_correct, grid_shape)
    nb = _normalized(agg_b_correct, grid_shape)
    nm = _normalized(agg_a_as_b, grid_shape)
    if mean_patch_misclass.shape != tuple(grid_shape) or mean_patch_b.shape != tuple(grid_shape):
        raise ValidationError("mean patches must be on the normalized grid")

    suggestions: list[FeatureSuggestion] = []
    common_cells = (nm >= high) & (nb >= high)
    for region in _regions(common_cells):
        sim = _ncc(mean_patch_misclass[region], mean_patch_b[region])
        if sim < tau_similarity:
            continue
        suggestions.append(
            FeatureSuggestion(
                kind="common",
                owning_class=source_class,
                orientation_bin=orientation_bin,
                cells=[(int(r), int(c)) for r, c in zip(*np.nonzero(region))],
                saliency=float(nm[region].sum() + nb[region].sum()),
                correlation=pair_correlation,
                similarity=sim,
            )
        )
    unique_cells = (na >= high) & (nm <= low)
    for region in _regions(unique_cells):
        suggestions.append(
            FeatureSuggestion(
                kind="unique",
                owning_class=source_class,
                orientation_bin=orientation_bin,
                cells=[(int(r), int(c)) for r, c in zip(*np.nonzero(region))],
                saliency=float(na[region].sum()),
                correlation=pair_correlation,
                similarity=_ncc(mean_patch_misclass[region], mean_patch_b[region]),
            )
        )
    suggestions.sort(key=lambda s: -s.saliency)
    return suggestions


@dataclass
class PcaLeakageResult:
    train_coords: np.ndarray  # (n, 2)
    test_coords: np.ndarray
    train_classes: list[str]
    test_classes: list[str]
    overlap_score: float
    radius: float


def _patches(samples, patch_shape) -> tuple[np.ndarray, list[str]]:
    rows, classes = [], []
    for s in samples:
        if s.bbox is None:
            continue
        x, y, w, h = (int(round(v)) for v in s.bbox)
        window = s.image[max(y, 0) : y + max(h, 1), max(x, 0) : x + max(w, 1)]
        if window.size == 0:
            continue
        rows.append(bilinear_resize(window.astype(np.float64), patch_shape).ravel())
        classes.append(s.class_id)
    return (np.array(rows) if rows else np.zeros((0, patch_shape[0] * patch_shape[1]))), classes


def pca_leakage(train_samples, test_samples, patch_shape=(32, 64), radius_factor=0.1) -> PcaLeakageResult:
    """Project bbox contents onto the top-2 principal components and score
    how often a test point sits on a same-class train point.

    The overlap score is the fraction of test points whose nearest train
    neighbor in PC space shares their class and lies within
    radius_factor * median pairwise distance.
    """
    x_train, cls_train = _patches(train_samples, patch_shape)
    x_test, cls_test = _patches(test_samples, patch_shape)
    n = len(x_train) + len(x_test)
    if n < 3 or len(x_train) == 0 or len(x_test) == 0:
        raise ValidationError("PCA leakage needs at least 3 boxed samples across both sets")
    combined = np.vstack([x_train, x_test])
    centered = combined - combined.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    # Deterministic sign: largest-magnitude loading is positive.
    for k in range(2):
        j = np.argmax(np.abs(components[k]))
        if components[k, j] < 0:
            components[k] = -components[k]
    coords = centered @ components.T
    train_xy, test_xy = coords[: len(x_train)], coords[len(x_train) :]

    diff = coords[:, None, :] - coords[None, :, :]
    dists = np.sqrt((diff**2).sum(-1))
    upper = dists[np.triu_indices(n, k=1)]
    radius = radius_factor * float(np.median(upper))
    hits = 0
    d_test_train = np.sqrt(((test_xy[:, None, :] - train_xy[None, :, :]) ** 2).sum(-1))
    nearest = d_test_train.argmin(axis=1)
    for i, j in enumerate(nearest):
        if d_test_train[i, j] <= radius and cls_test[i] == cls_train[j]:
            hits += 1
    return PcaLeakageResult(
        train_coords=train_xy,
        test_coords=test_xy,
        train_classes=cls_train,
        test_classes=cls_test,
        overlap_score=hits / len(x_test),
        radius=radius,
    )


@dataclass
class SweepRow:
    value: float  # ratio or size
    per_seed: dict[int, float]
    mean_map50: float


def _run_mix(real, synthetic, ratio, total, seed, config, classes, test_manifest, test_images, root):
    manifest = mix(real, synthetic, ratio=ratio, total=total, seed=seed)
    model, _ = train_detector(manifest, config, seed, classes, root)
    result = evaluate(model, test_manifest, images=test_images)
    return result.map50


def ratio_sweep(
    real: DatasetManifest,
    synthetic: DatasetManifest,
    test_manifest: DatasetManifest,
    ratios: list[float],
    total: int,
    seeds: list[int],
    config: DetectorConfig,
    classes,
    root=None,
) -> list[SweepRow]:
    """Mean mAP50 per real fraction at constant total training size."""
    test_images = load_images(test_manifest, root)
    rows = []
    for ratio in ratios:
        per_seed = {
            seed: _run_mix(real, synthetic, ratio, total, seed, config, classes, test_manifest, test_images, root)
            for seed in seeds
        }
        rows.append(SweepRow(value=ratio, per_seed=per_seed, mean_map50=float(np.mean(list(per_seed.values())))))
    return rows


def size_sweep(
    real: DatasetManifest,
    synthetic: DatasetManifest,
    test_manifest: DatasetManifest,
    sizes: list[int],
    seeds: list[int],
    config: DetectorConfig,
    classes,
    ratio: float = 0.5,
    root=None,
) -> list[SweepRow]:
    """Mean mAP50 per total training size at a constant real fraction."""
    test_images = load_images(test_manifest, root)
    rows = []
    for size in sizes:
        per_seed = {
            seed: _run_mix(real, synthetic, ratio, size, seed, config, classes, test_manifest, test_images, root)
            for seed in seeds
        }
        rows.append(SweepRow(value=float(size), per_seed=per_seed, mean_map50=float(np.mean(list(per_seed.values())))))
    return rows


def save_sweep_table(rows: list[SweepRow], path, label: str) -> None:
    lines = [f"# {label} mean_map50 per_seed..."]
    for row in rows:
        seeds = " ".join(f"{s}:{v:.4f}" for s, v in sorted(row.per_seed.items()))
        lines.append(f"{row.value:g} {row.mean_map50:.4f} {seeds}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_bin_report(report: OrientationBinReport, path) -> None:
    lines = [f"# {report.source}->{report.predicted} width={report.bin_width:g}"]
    for b in report.bins:
        lines.append(f"{b.start:g} {b.correct} {b.misclassified} {b.fraction:.4f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_confusion_png(confusion: np.ndarray, class_order: list[str], path, title="confusion") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(np.asarray(confusion, dtype=float), cmap="viridis")
    ax.set_xticks(range(len(class_order)), class_order, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(class_order)), class_order, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    ax.set_title(title)
    for i in range(len(class_order)):
        for j in range(len(class_order)):
            ax.text(j, i, f"{confusion[i][j]:.0f}", ha="center", va="center", color="w", fontsize=6)
    fig.colorbar(im)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_pca_png(result: PcaLeakageResult, path, title="train/test in PC space") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(result.train_coords[:, 0], result.train_coords[:, 1], s=6, c="tab:green", label="train")
    ax.scatter(result.test_coords[:, 0], result.test_coords[:, 1], s=6, c="tab:blue", label="test")
    ax.set_title(f"{title} (overlap={result.overlap_score:.2f})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_orientation_png(reports: list[OrientationBinReport], labels: list[str], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.2))
    for report, label in zip(reports, labels):
        xs = [b.start for b in report.bins]
        ys = [b.fraction for b in report.bins]
        ax.plot(xs, ys, marker="s", label=label)
    ax.set_xlabel("orientation (deg)")
    ax.set_ylabel("misclassified fraction")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
