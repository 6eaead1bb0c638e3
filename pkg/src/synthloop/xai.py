"""KernelSHAP attribution over grid superpixels with background replacement.

Coalitions of superpixels are masked by substituting background imagery, the
model is evaluated per mask, and attributions come from the kernel-weighted
least-squares fit with the efficiency constraint (sum of attributions equals
the model output minus the baseline) enforced exactly by substitution.  When
the coalition space is small enough (2^S <= n_masks) every coalition is
enumerated and the result equals exact Shapley values; otherwise coalition
sizes are sampled from the Shapley kernel distribution, with the all-on and
all-off coalitions always represented through the constraint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

MASK_COLOR = (150, 40, 190)  # overlay purple
NORMALIZED_GRID = (32, 64)


@dataclass
class SuperpixelGrid:
    """Rectangular partition of a bbox into rows x cols cells.

    ``labels`` maps each bbox-local pixel to its cell index (row-major);
    remainder pixels fall into the last row/column of cells.
    """

    bbox: tuple[int, int, int, int]
    rows: int
    cols: int
    labels: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def cell_pixel_counts(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.n_cells)


def make_grid(bbox, rows: int, cols: int) -> SuperpixelGrid:
    x, y, w, h = (int(v) for v in bbox)
    if rows * cols < 1 or rows < 1 or cols < 1:
        raise ValidationError("grid needs at least one cell")
    if w < cols or h < rows:
        raise ValidationError(f"bbox {w}x{h} smaller than grid {cols}x{rows}")
    rh, cw = h // rows, w // cols
    ri = np.minimum(np.arange(h) // rh, rows - 1)
    ci = np.minimum(np.arange(w) // cw, cols - 1)
    labels = ri[:, None] * cols + ci[None, :]
    return SuperpixelGrid(bbox=(x, y, w, h), rows=rows, cols=cols, labels=labels)


def mask_image(image: np.ndarray, grid: SuperpixelGrid, bits: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Replace superpixels with bit 0 by the background at the same coordinates."""
    if background.shape != image.shape:
        raise ValidationError("background sample must match image dimensions")
    bits = np.asarray(bits).astype(bool)
    if bits.shape != (grid.n_cells,):
        raise ValidationError(f"need {grid.n_cells} mask bits, got {bits.shape}")
    out = image.copy()
    x, y, w, h = grid.bbox
    region = out[y : y + h, x : x + w]
    drop = ~bits[grid.labels]
    region[drop] = background[y : y + h, x : x + w][drop]
    return out


@dataclass
class AttributionMap:
    sample_id: str
    target_class: int
    values: np.ndarray  # per superpixel
    baseline: float  # mean model output over the background set, all masked
    fx: float  # model output on the unmasked sample
    grid: SuperpixelGrid
    n_masks: int
    seed: int
    exact: bool
    sample_bbox: tuple[float, float, float, float] | None = None

    def pixel_values(self, image_shape) -> np.ndarray:
        """Spread superpixel values onto an image-sized array (0 outside bbox)."""
        out = np.zeros(image_shape, dtype=np.float64)
        x, y, w, h = self.grid.bbox
        out[y : y + h, x : x + w] = self.values[self.grid.labels]
        return out


def shapley_kernel_weights(s: int) -> np.ndarray:
    """Kernel weight per coalition size 1..s-1 (unnormalized)."""
    return np.array([(s - 1) / float(comb(s, k)) / (k * (s - k)) for k in range(1, s)])


def _resolve_model(model):
    fn = getattr(model, "predict_proba", model)
    if not callable(fn):
        raise ValidationError("model must be callable or expose predict_proba")
    return fn


def _coalition_values(fn, sample, grid, masks, backgrounds, target_class, chunk=512):
    """Model outputs for masked variants of the sample, one background each."""
    values = np.empty(len(masks), dtype=np.float64)
    for start in range(0, len(masks), chunk):
        batch = [
            mask_image(sample, grid, bits, backgrounds[b])
            for bits, b in masks[start : start + chunk]
        ]
        values[start : start + len(batch)] = fn(np.stack(batch))[:, target_class]
    return values


def _coalition_values_averaged(fn, sample, grid, bits_list, backgrounds, target_class, chunk=2048):
    """Coalition values averaged over the whole background set (exact mode)."""
    n_bg = len(backgrounds)
    per_chunk = max(1, chunk // n_bg)
    values = np.empty(len(bits_list), dtype=np.float64)
    for start in range(0, len(bits_list), per_chunk):
        group = bits_list[start : start + per_chunk]
        batch = np.stack(
            [mask_image(sample, grid, bits, bg) for bits in group for bg in backgrounds]
        )
        out = fn(batch)[:, target_class].reshape(len(group), n_bg)
        values[start : start + len(group)] = out.mean(axis=1)
    return values


def _constrained_wls(design, weights, targets, delta, s):
    """Solve the kernel regression with sum(phi) = delta by substitution."""
    if s == 1:
        return np.array([delta])
    a = design[:, :-1] - design[:, -1:]
    y = targets - design[:, -1] * delta
    wa = a * weights[:, None]
    ata = a.T @ wa
    damp = 1e-8 * max(1.0, float(np.trace(ata)) / ata.shape[0])
    ata[np.diag_indices_from(ata)] += damp
    try:
        theta = np.linalg.solve(ata, a.T @ (weights * y))
    except np.linalg.LinAlgError:
        theta = None
    if theta is None or not np.all(np.isfinite(theta)):
        raise ValidationError(
            "singular attribution regression; increase n_masks or coarsen the grid"
        )
    return np.concatenate([theta, [delta - theta.sum()]])


def kernel_shap(
    model,
    sample: np.ndarray,
    target_class: int,
    grid: SuperpixelGrid,
    background_set,
    n_masks: int = 1000,
    seed: int = 0,
    sample_id: str = "",
    sample_bbox=None,
) -> AttributionMap:
    """Superpixel attributions for one classification of one sample.

    Deterministic under (inputs, seed).  In exact mode each coalition value is
    averaged over the whole background set; in sampled mode each mask draws a
    single background.
    """
    fn = _resolve_model(model)
    backgrounds = np.stack(list(background_set))
    if len(backgrounds) == 0:
        raise ValidationError("background set is empty")
    s = grid.n_cells
    if n_masks < s + 2:
        raise ValidationError(f"n_masks must be >= {s + 2} for {s} superpixels")
    fx = float(fn(sample[None])[0, target_class])
    all_off = np.zeros(s, dtype=bool)
    baseline = float(
        np.mean(
            fn(np.stack([mask_image(sample, grid, all_off, bg) for bg in backgrounds]))[:, target_class]
        )
    )
    delta = fx - baseline

    exact = 2**s <= n_masks
    if exact:
        if s == 1:
            values = _constrained_wls(None, None, None, delta, 1)
            return AttributionMap(sample_id, target_class, values, baseline, fx, grid, n_masks, seed, True, sample_bbox)
        codes = np.arange(2**s, dtype=np.int64)
        bits = (codes[:, None] >> np.arange(s)) & 1
        sizes = bits.sum(axis=1)
        strict = (sizes > 0) & (sizes < s)
        design = bits[strict].astype(np.float64)
        kernel = shapley_kernel_weights(s)
        weights = kernel[sizes[strict] - 1]
        bits_list = [row.astype(bool) for row in design]
        targets = _coalition_values_averaged(fn, sample, grid, bits_list, backgrounds, target_class)
        values = _constrained_wls(design, weights, targets, delta, s)
    else:
        rng = np.random.default_rng(seed)
        # Kernel weight per coalition times the number of size-k coalitions:
        # the binomials cancel, leaving p(k) proportional to 1/(k(s-k)).
        size_p = np.array([1.0 / (k * (s - k)) for k in range(1, s)])
        size_p = size_p / size_p.sum()
        n_sampled = n_masks - 2  # all-on and all-off live in the constraint
        sizes = rng.choice(np.arange(1, s), size=n_sampled, p=size_p)
        design = np.zeros((n_sampled, s), dtype=np.float64)
        masks = []
        for i, k in enumerate(sizes):
            members = rng.choice(s, size=int(k), replace=False)
            design[i, members] = 1.0
            masks.append((design[i].astype(bool), int(rng.integers(len(backgrounds)))))
        targets = _coalition_values(fn, sample, grid, masks, backgrounds, target_class)
        weights = np.ones(n_sampled)
        values = _constrained_wls(design, weights, targets, delta, s)
    return AttributionMap(sample_id, target_class, values, baseline, fx, grid, n_masks, seed, exact, sample_bbox)


def mask_average_attribution(
    model, sample, target_class, grid, background_set, n_masks: int = 1000, seed: int = 0
) -> np.ndarray:
    """Simpler estimator for comparison: mean output with a superpixel kept
    minus mean output with it masked, over uniformly random masks."""
    fn = _resolve_model(model)
    backgrounds = np.stack(list(background_set))
    s = grid.n_cells
    rng = np.random.default_rng(seed)
    design = rng.integers(0, 2, size=(n_masks, s)).astype(bool)
    masks = [(row, int(rng.integers(len(backgrounds)))) for row in design]
    vals = _coalition_values(fn, sample, grid, masks, backgrounds, target_class)
    out = np.zeros(s)
    for i in range(s):
        on = design[:, i]
        if on.any() and (~on).any():
            out[i] = vals[on].mean() - vals[~on].mean()
    return out


@dataclass
class AggregatedSaliencyMap:
    """Per-pixel count of samples whose attribution cleared the threshold."""

    counts: np.ndarray  # (H, W) int
    n_samples: int
    theta_contrib: float
    theta_mask: float
    target_class: int
    bbox: tuple[int, int, int, int]  # union of contributing map bboxes


def aggregate(
    maps: list[AttributionMap],
    theta_contrib: float = 0.4,
    image_shape=(128, 256),
    theta_mask: float = 0.5,
) -> AggregatedSaliencyMap:
    """Count, per pixel, the samples where its superpixel value exceeded
    theta_contrib times that sample's maximum positive value."""
    if not maps:
        raise ValidationError("aggregate needs at least one attribution map")
    if not 0.0 < theta_contrib < 1.0 or not 0.0 < theta_mask < 1.0:
        raise ValidationError("thresholds must lie in (0, 1)")
    target = maps[0].target_class
    if any(m.target_class != target for m in maps):
        raise ValidationError("attribution maps target different classes")
    counts = np.zeros(image_shape, dtype=np.int64)
    x0 = y0 = 10**9
    x1 = y1 = -1
    for m in maps:
        mx = float(m.values.max(initial=0.0))
        gx, gy, gw, gh = m.grid.bbox
        x0, y0 = min(x0, gx), min(y0, gy)
        x1, y1 = max(x1, gx + gw), max(y1, gy + gh)
        if mx <= 0:
            continue
        cell_hit = m.values > theta_contrib * mx
        counts[gy : gy + gh, gx : gx + gw] += cell_hit[m.grid.labels]
    bbox = (x0, y0, max(x1 - x0, 1), max(y1 - y0, 1))
    return AggregatedSaliencyMap(
        counts=counts,
        n_samples=len(maps),
        theta_contrib=theta_contrib,
        theta_mask=theta_mask,
        target_class=target,
        bbox=bbox,
    )


def overlay_mask(
    agg: AggregatedSaliencyMap, theta_mask: float | None = None, image: np.ndarray | None = None
) -> np.ndarray:
    """Representative image with below-threshold pixels painted purple."""
    theta = agg.theta_mask if theta_mask is None else theta_mask
    if image is None:
        image = np.zeros(agg.counts.shape, dtype=np.uint8)
    if image.shape != agg.counts.shape:
        raise ValidationError("representative image dimensions must match the map")
    rgb = np.repeat(image[:, :, None], 3, axis=2).astype(np.uint8)
    max_count = int(agg.counts.max(initial=0))
    masked = np.ones_like(agg.counts, dtype=bool) if max_count == 0 else agg.counts < theta * max_count
    rgb[masked] = MASK_COLOR
    return rgb


def save_overlay_png(rgb: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def bilinear_resize(arr: np.ndarray, out_shape) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment."""
    h, w = arr.shape
    oh, ow = out_shape
    arr = np.asarray(arr, dtype=np.float64)
    ys = (np.arange(oh) + 0.5) * h / oh - 0.5
    xs = (np.arange(ow) + 0.5) * w / ow - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def normalized_window(agg: AggregatedSaliencyMap, grid_shape=NORMALIZED_GRID) -> np.ndarray:
    """Counts inside the map's bbox resampled to the shared comparison grid."""
    x, y, w, h = agg.bbox
    window = agg.counts[y : y + h, x : x + w].astype(np.float64)
    return bilinear_resize(window, grid_shape)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def correlate_maps(
    agg_a: AggregatedSaliencyMap,
    agg_b: AggregatedSaliencyMap,
    max_shift: int = 0,
    grid_shape=NORMALIZED_GRID,
) -> float:
    """Pearson correlation of bbox-normalized count maps.

    With ``max_shift`` > 0 the result is the maximum correlation over integer
    cell shifts up to that radius in each axis (overlapping region only).
    """
    wa = normalized_window(agg_a, grid_shape)
    wb = normalized_window(agg_b, grid_shape)
    h, w = wa.shape
    best = -1.0
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            ay0, by0 = max(0, dy), max(0, -dy)
            ax0, bx0 = max(0, dx), max(0, -dx)
            hh, ww = h - abs(dy), w - abs(dx)
            if hh < 2 or ww < 2:
                continue
            c = _pearson(wa[ay0 : ay0 + hh, ax0 : ax0 + ww], wb[by0 : by0 + hh, bx0 : bx0 + ww])
            best = max(best, c)
    return best


def bbox_focus(maps: list[AttributionMap], bboxes: list[tuple], image_shape=(128, 256)) -> float:
    """Mean percentage of positive attribution mass inside the true box.

    Maps should cover the whole image (box plus exterior superpixels).
    """
    if len(maps) != len(bboxes):
        raise ValidationError("need one ground-truth bbox per attribution map")
    fractions = []
    for m, bbox in zip(maps, bboxes):
        pix = np.maximum(m.pixel_values(image_shape), 0.0)
        total = pix.sum()
        if total <= 0 or bbox is None:
            fractions.append(0.0)
            continue
        x, y, w, h = (int(round(v)) for v in bbox)
        inside = pix[max(y, 0) : y + h, max(x, 0) : x + w].sum()
        fractions.append(float(inside / total))
    return float(np.mean(fractions)) * 100.0 if fractions else 0.0


def save_attribution(m: AttributionMap, prefix) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    m.values.astype(np.float64).tofile(str(prefix) + ".bin")
    sidecar = {
        "kind": "attribution",
        "sample_id": m.sample_id,
        "target_class": m.target_class,
        "rows": m.grid.rows,
        "cols": m.grid.cols,
        "bbox": list(m.grid.bbox),
        "baseline": m.baseline,
        "fx": m.fx,
        "n_masks": m.n_masks,
        "seed": m.seed,
        "exact": m.exact,
    }
    Path(str(prefix) + ".txt").write_text(json.dumps(sidecar, indent=1), encoding="utf-8")


def save_aggregated(agg: AggregatedSaliencyMap, prefix) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    agg.counts.astype(np.int32).tofile(str(prefix) + ".bin")
    sidecar = {
        "kind": "aggregated",
        "shape": list(agg.counts.shape),
        "n_samples": agg.n_samples,
        "theta_contrib": agg.theta_contrib,
        "theta_mask": agg.theta_mask,
        "target_class": agg.target_class,
        "bbox": list(agg.bbox),
    }
    Path(str(prefix) + ".txt").write_text(json.dumps(sidecar, indent=1), encoding="utf-8")


def load_aggregated(prefix) -> AggregatedSaliencyMap:
    meta = json.loads(Path(str(prefix) + ".txt").read_text(encoding="utf-8"))
    counts = np.fromfile(str(prefix) + ".bin", dtype=np.int32).reshape(meta["shape"]).astype(np.int64)
    return AggregatedSaliencyMap(
        counts=counts,
        n_samples=meta["n_samples"],
        theta_contrib=meta["theta_contrib"],
        theta_mask=meta["theta_mask"],
        target_class=meta["target_class"],
        bbox=tuple(meta["bbox"]),
    )
