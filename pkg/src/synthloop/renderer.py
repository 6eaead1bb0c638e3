"""Software rasterizer producing IR-style 8-bit frames.

Pipeline: flat-shaded z-buffered rasterization of the placed scene, diffraction
blur by convolution with an Airy-disk kernel, optional capture noise (applied
only to frames tagged as real), then gain/offset quantization to uint8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.special import j1, jn_zeros

from .errors import ValidationError
from .scene import PlacedScene, SceneConfig, make_camera

J1_FIRST_ZERO = float(jn_zeros(1, 1)[0])  # ~3.8317

DEFAULT_FIRST_ZERO_RADIUS = 2.5
DEFAULT_KERNEL_SIZE = 11
DEFAULT_GAIN = 210.0
DEFAULT_OFFSET = 4.0
SENSOR_NOISE_SIGMA = 2.0 / 255.0
FIXED_PATTERN_AMPLITUDE = 1.0 / 255.0
_FIXED_PATTERN_SEED = 0x0F1DE
_NEAR_PLANE = 1.0


@dataclass
class RadianceImage:
    values: np.ndarray  # (h, w) float64, >= 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("radiance image must be 2D")
        if self.values.size and self.values.min() < 0:
            raise ValidationError("radiance values must be non-negative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class AiryKernel:
    size: int
    values: np.ndarray  # (size, size), sums to 1
    first_zero_radius: float


@dataclass
class RenderReport:
    degenerate_faces: int = 0
    drawn_faces: int = 0


@dataclass
class Frame:
    """One rendered 8-bit frame plus its ground truth."""

    image: np.ndarray  # (h, w) uint8
    bbox: tuple[int, int, int, int] | None  # (x, y, w, h), None for background
    class_id: str  # "background" when no vehicle is visible
    orientation: float
    provenance: str  # "real" | "synthetic"
    version_label: str
    range_m: float = 0.0

    def __post_init__(self):
        if self.provenance not in ("real", "synthetic"):
            raise ValidationError("provenance must be 'real' or 'synthetic'", field="provenance")
        if self.bbox is not None:
            x, y, w, h = self.bbox
            ih, iw = self.image.shape
            if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > iw or y + h > ih:
                raise ValidationError(f"bbox {self.bbox} outside {iw}x{ih} image", field="bbox")


def airy_kernel(first_zero_radius: float = DEFAULT_FIRST_ZERO_RADIUS, size: int = DEFAULT_KERNEL_SIZE) -> AiryKernel:
    """Airy diffraction pattern [2*J1(q)/q]^2 sampled on a pixel grid.

    ``q`` is scaled so the first zero of the pattern falls at
    ``first_zero_radius`` pixels from the center; the center cell takes the
    limit value 1.  Weights are normalized to sum to 1.
    """
    if not first_zero_radius > 0:
        raise ValidationError("first_zero_radius must be positive", field="first_zero_radius")
    if size < 3 or size % 2 == 0:
        raise ValidationError("size must be odd and >= 3", field="size")
    half = size // 2
    dy, dx = np.mgrid[-half : half + 1, -half : half + 1]
    r = np.hypot(dy, dx)
    q = J1_FIRST_ZERO * r / first_zero_radius
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(q == 0.0, 1.0, (2.0 * j1(q) / np.where(q == 0.0, 1.0, q)) ** 2)
    w /= w.sum()
    return AiryKernel(size=size, values=w, first_zero_radius=first_zero_radius)


def convolve(image: RadianceImage, kernel: AiryKernel) -> RadianceImage:
    """2D convolution with replicate (clamp-to-edge) boundary handling."""
    k = kernel.values
    if k.shape[0] >= image.height or k.shape[1] >= image.width:
        raise ValidationError("kernel must be smaller than the image")
    if k.shape == (1, 1):
        return RadianceImage(image.values * k[0, 0])
    half = k.shape[0] // 2
    padded = np.pad(image.values, half, mode="edge")
    out = signal.fftconvolve(padded, k, mode="valid")
    return RadianceImage(np.maximum(out, 0.0))


def quantize(image: RadianceImage, gain: float = DEFAULT_GAIN, offset: float = DEFAULT_OFFSET) -> np.ndarray:
    """Map radiance to uint8: clamp(round(gain*value + offset), 0, 255)."""
    if not gain > 0:
        raise ValidationError("gain must be positive", field="gain")
    return np.clip(np.round(gain * image.values + offset), 0, 255).astype(np.uint8)


def background_image(config: SceneConfig) -> RadianceImage:
    """Ambient ground/sky model: rays pointing below the horizon see ground."""
    cam = make_camera(config)
    h, w = config.image_size
    rows = np.arange(h, dtype=np.float64)
    # Ray direction z component only depends on the row (camera has no roll).
    dz = cam.forward[2] + ((cam.cy - rows) / cam.focal_px) * cam.up[2]
    sky = 0.06 + 0.10 * config.ambient_level
    ground = 0.16 + 0.28 * config.ambient_level
    col = np.where(dz < 0.0, ground, sky)
    return RadianceImage(np.repeat(col[:, None], w, axis=1))


def _shade_faces(scene: PlacedScene) -> tuple[np.ndarray, np.ndarray]:
    """Per-face flat shade value and validity mask (non-degenerate faces)."""
    tri = scene.triangles
    e0 = tri[:, 1] - tri[:, 0]
    e1 = tri[:, 2] - tri[:, 0]
    normals = np.cross(e0, e1)
    area2 = np.linalg.norm(normals, axis=1)
    ok = area2 > 1e-12
    n = np.zeros_like(normals)
    n[ok] = normals[ok] / area2[ok, None]
    centroid = tri.mean(axis=1)
    to_cam = scene.camera.position[None, :] - centroid
    to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-12)
    # Double-sided shading: orient each normal toward the camera.
    flip = np.sign(np.sum(n * to_cam, axis=1))
    flip[flip == 0] = 1.0
    n *= flip[:, None]
    l = scene.light_direction
    ndotl = np.maximum(0.0, n @ l)
    half_vec = l[None, :] + to_cam
    half_vec /= np.maximum(np.linalg.norm(half_vec, axis=1, keepdims=True), 1e-12)
    ndoth = np.maximum(0.0, np.sum(n * half_vec, axis=1))
    s = scene.smoothness
    spec = np.where(s > 0, ndoth ** (1.0 + 31.0 * s), 0.0)
    shade = scene.emission + scene.reflectance * scene.ambient_level * ndotl + s * spec
    return shade, ok


def render_scene(scene: PlacedScene) -> tuple[RadianceImage, np.ndarray, RenderReport]:
    """Rasterize with a z-buffer; returns radiance, vehicle mask and report."""
    h, w = scene.config.image_size
    bg = background_image(scene.config).values
    depth = np.full((h, w), np.inf)
    out = bg.copy()
    mask = np.zeros((h, w), dtype=bool)
    shade, ok = _shade_faces(scene)
    report = RenderReport(degenerate_faces=int((~ok).sum()))

    tri = scene.triangles
    flat = tri.reshape(-1, 3)
    pix, z = scene.camera.project(flat)
    pix = pix.reshape(-1, 3, 2)
    z = z.reshape(-1, 3)

    for t in range(tri.shape[0]):
        if not ok[t] or np.any(z[t] <= _NEAR_PLANE):
            continue
        p = pix[t]  # (3, 2) as (col, row)
        x0 = max(int(np.floor(p[:, 0].min())), 0)
        x1 = min(int(np.ceil(p[:, 0].max())) + 1, w)
        y0 = max(int(np.floor(p[:, 1].min())), 0)
        y1 = min(int(np.ceil(p[:, 1].max())) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        # Signed area in screen space; skip edge-on faces.
        d = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
        if abs(d) < 1e-12:
            report.degenerate_faces += 1
            continue
        xs = np.arange(x0, x1, dtype=np.float64)
        ys = np.arange(y0, y1, dtype=np.float64)
        gx, gy = np.meshgrid(xs, ys)
        w0 = ((p[1, 0] - gx) * (p[2, 1] - gy) - (p[2, 0] - gx) * (p[1, 1] - gy)) / d
        w1 = ((p[2, 0] - gx) * (p[0, 1] - gy) - (p[0, 0] - gx) * (p[2, 1] - gy)) / d
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        # Perspective-correct depth from linear interpolation of 1/z.
        inv_z = w0 / z[t, 0] + w1 / z[t, 1] + w2 / z[t, 2]
        zi = 1.0 / np.maximum(inv_z, 1e-12)
        sub_d = depth[y0:y1, x0:x1]
        win = inside & (zi < sub_d)
        sub_d[win] = zi[win]
        out[y0:y1, x0:x1][win] = shade[t]
        mask[y0:y1, x0:x1][win] = True
        report.drawn_faces += 1
    return RadianceImage(out), mask, report


def rasterize(scene: PlacedScene) -> RadianceImage:
    return render_scene(scene)[0]


def _fixed_pattern(shape: tuple[int, int]) -> np.ndarray:
    rng = np.random.default_rng(_FIXED_PATTERN_SEED)
    return FIXED_PATTERN_AMPLITUDE * (2.0 * rng.random(shape) - 1.0)


_FIXED_PATTERN_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sensor_noise(shape: tuple[int, int], seed) -> np.ndarray:
    """Per-frame Gaussian capture noise plus the fixed-pattern offset."""
    if shape not in _FIXED_PATTERN_CACHE:
        _FIXED_PATTERN_CACHE[shape] = _fixed_pattern(shape)
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, SENSOR_NOISE_SIGMA, shape) + _FIXED_PATTERN_CACHE[shape]


def mask_bbox(mask: np.ndarray, dilate: float) -> tuple[int, int, int, int] | None:
    """Tight box around true pixels, dilated on every side, clipped to image."""
    rows = np.any(mask, axis=1)
    cols = np.any(mask, axis=0)
    if not rows.any():
        return None
    y0, y1 = np.where(rows)[0][[0, -1]]
    x0, x1 = np.where(cols)[0][[0, -1]]
    h, w = mask.shape
    x0 = max(int(np.floor(x0 - dilate)), 0)
    y0 = max(int(np.floor(y0 - dilate)), 0)
    x1 = min(int(np.ceil(x1 + dilate)), w - 1)
    y1 = min(int(np.ceil(y1 + dilate)), h - 1)
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


_BLURRED_BG_CACHE: dict[tuple, np.ndarray] = {}


def _blurred_background(config: SceneConfig, kernel: AiryKernel) -> np.ndarray:
    key = (
        config.image_size,
        round(config.ambient_level, 9),
        round(config.camera_elevation, 9),
        round(config.range_m, 6),
        round(config.focal_px, 6),
        kernel.size,
        round(kernel.first_zero_radius, 9),
    )
    if key not in _BLURRED_BG_CACHE:
        _BLURRED_BG_CACHE[key] = convolve(background_image(config), kernel).values
    return _BLURRED_BG_CACHE[key]


def _blur_with_background(radiance: RadianceImage, mask: np.ndarray, config, kernel) -> np.ndarray:
    """Full-frame blur, but convolving only around the vehicle.

    Away from the vehicle the radiance equals the background model, whose
    blur is cached; pixels whose kernel support touches vehicle pixels all lie
    inside the pasted window, so the result matches a whole-frame convolution.
    """
    out = _blurred_background(config, kernel).copy()
    box = mask_bbox(mask, kernel.size)
    if box is None:
        return out
    x, y, w, h = box
    half = kernel.size // 2
    ih, iw = radiance.values.shape
    cx0, cy0 = max(x - half, 0), max(y - half, 0)
    cx1, cy1 = min(x + w + half, iw), min(y + h + half, ih)
    window = RadianceImage(radiance.values[cy0:cy1, cx0:cx1])
    pad = np.pad(window.values, half, mode="edge")
    # Interior context is real data; only true frame borders fall back to replicate.
    blurred = signal.fftconvolve(pad, kernel.values, mode="valid")
    sx0, sy0 = x - cx0, y - cy0
    out[y : y + h, x : x + w] = np.maximum(blurred[sy0 : sy0 + h, sx0 : sx0 + w], 0.0)
    return out


def render_frame(
    mesh,
    config: SceneConfig,
    provenance: str,
    seed=0,
    kernel: AiryKernel | None = None,
    gain: float = DEFAULT_GAIN,
    offset: float = DEFAULT_OFFSET,
) -> Frame:
    """Full frame pipeline: place, rasterize, blur, noise (real only), quantize.

    The ground-truth box is the tight box around vehicle pixels before the
    blur, dilated by the kernel's first zero radius.  Passing ``mesh=None``
    renders a pure background frame.
    """
    from .scene import place_vehicle  # local import to avoid cycle at module load

    if kernel is None:
        kernel = airy_kernel()
    if mesh is None:
        mask = np.zeros(config.image_size, dtype=bool)
        blurred = _blurred_background(config, kernel).copy()
        class_id, version = "background", "v0"
    else:
        scene = place_vehicle(mesh, config)
        radiance, mask, _ = render_scene(scene)
        blurred = _blur_with_background(radiance, mask, config, kernel)
        class_id, version = mesh.class_id, mesh.version_label
    if provenance == "real":
        blurred = np.maximum(blurred + sensor_noise(blurred.shape, seed), 0.0)
    image = quantize(RadianceImage(blurred), gain=gain, offset=offset)
    bbox = mask_bbox(mask, kernel.first_zero_radius)
    if bbox is None:
        class_id = "background"
    return Frame(
        image=image,
        bbox=bbox,
        class_id=class_id,
        orientation=config.vehicle_orientation,
        provenance=provenance,
        version_label=version,
        range_m=config.range_m,
    )
