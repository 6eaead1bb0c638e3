"""Editable 3D vehicle meshes, materials and scene placement.

Meshes live in a vehicle-local frame: +x forward, +z up, origin at the
ground-contact centroid.  Orientation 0 means the front faces the camera and
increases counterclockwise seen from above.  All numeric fields are
canonicalized to 9 significant decimal digits, the precision of the mesh file
format, so save/load is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError

MESH_MAGIC = "MESHv1"


def _q9(x: float) -> float:
    """Canonicalize to 9 significant decimal digits."""
    return float(f"{float(x):.9g}")


def _fmt9(x: float) -> str:
    return f"{float(x):.9g}"


@dataclass(frozen=True)
class Material:
    """Per-face surface parameters, each constrained to [0, 1]."""

    emission: float
    reflectance: float
    smoothness: float

    def __post_init__(self):
        for name in ("emission", "reflectance", "smoothness"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValidationError(f"material {name} must be finite", field=name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(
                    f"material {name}={v} outside [0, 1]", field=name
                )
            object.__setattr__(self, name, _q9(v))


@dataclass(frozen=True)
class Face:
    vertex_indices: tuple[int, int, int]
    material: Material
    region_tag: str


@dataclass
class MeshModel:
    """Triangle mesh with per-face materials and region tags."""

    class_id: str
    vertices: np.ndarray  # (n, 3) float64, metres
    faces: list[Face]
    version_label: str = "v0"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim == 2 and self.vertices.size:
            self.vertices = np.vectorize(_q9)(self.vertices)

    def validate(self) -> None:
        problems = []
        if not self.class_id or "_" in self.class_id:
            problems.append("class_id must be non-empty and contain no underscore")
        if "_" in self.version_label or not self.version_label:
            problems.append("version_label must be non-empty and contain no underscore")
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            problems.append("vertices must be an (n, 3) array")
        n = len(self.vertices)
        if n < 4:
            problems.append(f"mesh needs >= 4 vertices, has {n}")
        if len(self.faces) < 4:
            problems.append(f"mesh needs >= 4 faces, has {len(self.faces)}")
        for k, f in enumerate(self.faces):
            i, j, m = f.vertex_indices
            if len({i, j, m}) != 3:
                problems.append(f"face {k}: vertex indices not distinct")
            if not all(0 <= v < n for v in (i, j, m)):
                problems.append(f"face {k}: vertex index out of bounds")
            if not f.region_tag:
                problems.append(f"face {k}: empty region_tag")
        if problems:
            raise ValidationError("invalid mesh: " + "; ".join(problems))

    def region_tags(self) -> set[str]:
        return {f.region_tag for f in self.faces}

    def faces_with_tag(self, tag: str) -> list[int]:
        return [i for i, f in enumerate(self.faces) if f.region_tag == tag]

    def with_version(self, label: str) -> "MeshModel":
        return MeshModel(self.class_id, self.vertices.copy(), list(self.faces), label)

    def __eq__(self, other):
        if not isinstance(other, MeshModel):
            return NotImplemented
        return (
            self.class_id == other.class_id
            and self.version_label == other.version_label
            and np.array_equal(self.vertices, other.vertices)
            and self.faces == other.faces
        )


def save_mesh(mesh: MeshModel, path) -> None:
    """Write a mesh in the line-oriented text format (see load_mesh)."""
    mesh.validate()
    lines = [f"{MESH_MAGIC} {mesh.class_id} {mesh.version_label}"]
    for v in mesh.vertices:
        lines.append(f"v {_fmt9(v[0])} {_fmt9(v[1])} {_fmt9(v[2])}")
    for f in mesh.faces:
        i, j, k = f.vertex_indices
        m = f.material
        lines.append(
            f"f {i} {j} {k} {_fmt9(m.emission)} {_fmt9(m.reflectance)}"
            f" {_fmt9(m.smoothness)} {f.region_tag}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> MeshModel:
    """Parse a mesh file.

    Format: header ``MESHv1 <class_id> <version_label>``, then ``v x y z``
    vertex lines and ``f i j k emission reflectance smoothness region_tag``
    face lines, whitespace separated, UTF-8.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise ParseError("empty mesh file", line=1)
    head = raw[0].split()
    if len(head) != 3 or head[0] != MESH_MAGIC:
        raise ParseError(f"bad header {raw[0]!r}, expected '{MESH_MAGIC} <class> <version>'", line=1)
    verts: list[list[float]] = []
    faces: list[Face] = []
    for ln, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "v":
                if len(parts) != 4:
                    raise ParseError("vertex line needs 3 coordinates", line=ln, field="v")
                verts.append([float(p) for p in parts[1:4]])
            elif kind == "f":
                if len(parts) != 8:
                    raise ParseError(
                        "face line needs 3 indices, 3 material values and a region_tag",
                        line=ln,
                        field="f",
                    )
                idx = tuple(int(p) for p in parts[1:4])
                mat = Material(float(parts[4]), float(parts[5]), float(parts[6]))
                faces.append(Face(idx, mat, parts[7]))
            else:
                raise ParseError(f"unknown record {kind!r}", line=ln)
        except ValueError as exc:
            raise ParseError(f"bad numeric field: {exc}", line=ln) from exc
    mesh = MeshModel(head[1], np.array(verts, dtype=np.float64).reshape(-1, 3), faces, head[2])
    mesh.validate()
    return mesh


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValidationError("zero-length direction vector")
    return v / n


@dataclass(frozen=True)
class SceneConfig:
    """Camera, lighting and placement parameters for one rendering.

    ``image_size`` is (height, width) of the pre-crop frame.  ``focal_px``
    is the pinhole focal length in pixels; the default puts a ~6.5 m vehicle
    at roughly 130 px width from 1000 m.
    """

    vehicle_orientation: float = 0.0
    range_m: float = 1000.0
    camera_elevation: float = 2.0
    ambient_level: float = 0.35
    light_direction: tuple[float, float, float] = (0.75, 0.25, 0.61)
    image_size: tuple[int, int] = (512, 640)
    focal_px: float = 20000.0
    # Where the camera aims relative to the vehicle (lateral, vertical metres);
    # nonzero values move the vehicle off the frame center.
    look_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "vehicle_orientation", float(self.vehicle_orientation) % 360.0)
        if not self.range_m > 0:
            raise ValidationError("range must be positive", field="range_m")
        if not 0.0 <= self.ambient_level <= 1.0:
            raise ValidationError("ambient_level outside [0, 1]", field="ambient_level")
        object.__setattr__(self, "light_direction", tuple(_unit(self.light_direction)))
        object.__setattr__(self, "look_offset", (float(self.look_offset[0]), float(self.look_offset[1])))
        h, w = self.image_size
        if h <= 0 or w <= 0:
            raise ValidationError("image_size must be positive", field="image_size")


# Fixed look-at height (m): roughly vehicle mid-body for all benchmark classes.
CAMERA_TARGET_Z = 1.2


@dataclass
class Camera:
    position: np.ndarray  # (3,)
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    focal_px: float
    image_size: tuple[int, int]

    @property
    def cx(self) -> float:
        return self.image_size[1] / 2.0 - 0.5

    @property
    def cy(self) -> float:
        return self.image_size[0] / 2.0 - 0.5

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (n,3) -> camera coords (right, up, depth)."""
        d = points - self.position
        return np.stack([d @ self.right, d @ self.up, d @ self.forward], axis=1)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points -> (n,2) pixel (col, row) and (n,) depth."""
        c = self.to_camera(points)
        z = c[:, 2]
        u = self.cx + self.focal_px * c[:, 0] / z
        v = self.cy - self.focal_px * c[:, 1] / z
        return np.stack([u, v], axis=1), z

    def pixel_rays(self, cols: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Unit world-space ray directions through pixel centers."""
        x = (np.asarray(cols, dtype=np.float64) - self.cx) / self.focal_px
        y = (self.cy - np.asarray(rows, dtype=np.float64)) / self.focal_px
        d = (
            x[:, None] * self.right[None, :]
            + y[:, None] * self.up[None, :]
            + self.forward[None, :]
        )
        return d / np.linalg.norm(d, axis=1, keepdims=True)


def make_camera(config: SceneConfig) -> Camera:
    ly, lz = config.look_offset
    target = np.array([0.0, ly, CAMERA_TARGET_Z + lz])
    elev = math.radians(config.camera_elevation)
    position = target + config.range_m * np.array([math.cos(elev), 0.0, math.sin(elev)])
    forward = _unit(target - position)
    world_up = np.array([0.0, 0.0, 1.0])
    right = _unit(np.cross(forward, world_up))
    up = np.cross(right, forward)
    return Camera(position, right, up, forward, config.focal_px, config.image_size)


@dataclass
class PlacedScene:
    """World-space triangles with per-face materials plus the camera."""

    triangles: np.ndarray  # (t, 3, 3) world coordinates
    emission: np.ndarray  # (t,)
    reflectance: np.ndarray  # (t,)
    smoothness: np.ndarray  # (t,)
    camera: Camera
    light_direction: np.ndarray  # unit, pointing toward the light
    ambient_level: float
    config: SceneConfig
    class_id: str
    version_label: str


def rotation_about_z(degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def place_vehicle(mesh: MeshModel, config: SceneConfig) -> PlacedScene:
    """Rotate the mesh to the configured orientation and attach the camera."""
    mesh.validate()
    rot = rotation_about_z(config.vehicle_orientation)
    world = mesh.vertices @ rot.T
    tri = np.stack([world[[f.vertex_indices[k] for f in mesh.faces]] for k in range(3)], axis=1)
    return PlacedScene(
        triangles=tri,
        emission=np.array([f.material.emission for f in mesh.faces]),
        reflectance=np.array([f.material.reflectance for f in mesh.faces]),
        smoothness=np.array([f.material.smoothness for f in mesh.faces]),
        camera=make_camera(config),
        light_direction=_unit(config.light_direction),
        ambient_level=config.ambient_level,
        config=config,
        class_id=mesh.class_id,
        version_label=mesh.version_label,
    )


def box_faces(
    center,
    size,
    material: Material,
    tag: str,
    base_index: int,
    face_materials: dict[str, Material] | None = None,
) -> tuple[np.ndarray, list[Face]]:
    """Axis-aligned box: 8 vertices, 12 triangles, outward CCW winding.

    ``face_materials`` optionally overrides the material per side
    ("front", "back", "left", "right", "top", "bottom").
    """
    cx, cy, cz = center
    hx, hy, hz = (s / 2.0 for s in size)
    verts = np.array(
        [
            [cx - hx, cy - hy, cz - hz],
            [cx + hx, cy - hy, cz - hz],
            [cx + hx, cy + hy, cz - hz],
            [cx - hx, cy + hy, cz - hz],
            [cx - hx, cy - hy, cz + hz],
            [cx + hx, cy - hy, cz + hz],
            [cx + hx, cy + hy, cz + hz],
            [cx - hx, cy + hy, cz + hz],
        ]
    )
    sides = {
        "bottom": (0, 2, 1, 3),
        "top": (4, 5, 6, 7),
        "front": (1, 2, 6, 5),  # +x
        "back": (0, 4, 7, 3),  # -x
        "left": (2, 3, 7, 6),  # +y
        "right": (0, 1, 5, 4),  # -y
    }
    faces = []
    for name, (a, b, c, d) in sides.items():
        mat = (face_materials or {}).get(name, material)
        faces.append(Face((base_index + a, base_index + b, base_index + c), mat, tag))
        faces.append(Face((base_index + a, base_index + c, base_index + d), mat, tag))
    return verts, faces


def merge_parts(parts: list[tuple[np.ndarray, list[Face]]], class_id: str, version: str) -> MeshModel:
    verts = np.vstack([p[0] for p in parts])
    faces = [f for p in parts for f in p[1]]
    mesh = MeshModel(class_id, verts, faces, version)
    mesh.validate()
    return mesh
