"""Built-in desk benchmark: four parametric vehicles, two meshes per class.

Each class ships a detailed *reference* mesh (stands in for real captures:
finer facets, per-face emission jitter, rendered with sensor noise) and a
coarse *editable* mesh (the synthetic-data source an operator modifies).
Two deliberate realism flaws seed the case studies.  The editable
turrettank carries an exaggerated rear-engine hotspot matching the boxtruck's
genuine hot exhaust (the injected shared confusable feature; the reference
tank's engine is modest), which drives tank-as-truck confusion and is the
target of the scripted disruptive edit.  The editable wedgecar carries an
exaggerated hull smoothness, producing specular banding absent from the
reference, so the model never learns the real wedgecar's clean appearance;
that is the target of the scripted reinforcing edit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scene import Face, Material, MeshModel, box_faces, merge_parts


@dataclass(frozen=True)
class ConfusableFeature:
    """A shared bright hotspot injected on the editable meshes of two classes.

    class_b is the anchor whose reference mesh genuinely carries the feature;
    class_a only shows it in synthetic data (an exaggeration to be disrupted).
    """

    class_a: str
    region_a: str
    class_b: str
    region_b: str
    emission: float = 0.95


@dataclass(frozen=True)
class BenchmarkSpec:
    classes: tuple[str, ...] = ("boxtruck", "wedgecar", "turrettank", "flatcarrier")
    confusable: tuple[ConfusableFeature, ...] = (
        ConfusableFeature("turrettank", "rear_engine", "boxtruck", "rear_engine"),
    )
    flawed_smoothness: float = 0.9
    reference_smoothness: float = 0.12
    emission_jitter: float = 0.02
    vertex_jitter: float = 0.008
    noise_sigma: float = 2.0 / 255.0
    fixed_pattern_amplitude: float = 1.0 / 255.0

    def validate(self) -> None:
        if len(self.classes) < 4:
            raise ValidationError("benchmark needs at least 4 classes", field="classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValidationError("duplicate class names", field="classes")
        unknown = [c for c in self.classes if c not in _BUILDERS]
        if unknown:
            raise ValidationError(
                f"class(es) missing editable/reference mesh builders: {unknown}", field="classes"
            )
        for cf in self.confusable:
            for c in (cf.class_a, cf.class_b):
                if c not in self.classes:
                    raise ValidationError(f"confusable feature names unknown class {c!r}", field="confusable")
            if not 0.0 <= cf.emission <= 1.0:
                raise ValidationError("hotspot emission outside [0, 1]", field="confusable")


@dataclass
class BenchmarkBundle:
    spec: BenchmarkSpec
    reference: dict[str, MeshModel]
    editable: dict[str, MeshModel]
    seed: int


def _mat(emission, reflectance=0.5, smoothness=0.12) -> Material:
    return Material(emission, reflectance, smoothness)


def prism_faces(x0, x1, profile_yz, material: Material, tag: str, base_index: int):
    """Closed prism extruded along x from a (y, z) cross-section polygon."""
    prof = np.asarray(profile_yz, dtype=np.float64)
    n = len(prof)
    ring0 = np.column_stack([np.full(n, x0), prof[:, 0], prof[:, 1]])
    ring1 = np.column_stack([np.full(n, x1), prof[:, 0], prof[:, 1]])
    verts = np.vstack([ring0, ring1])
    faces = []
    for i in range(n):
        j = (i + 1) % n
        a, b = base_index + i, base_index + j
        c, d = base_index + n + j, base_index + n + i
        faces.append(Face((a, b, c), material, tag))
        faces.append(Face((a, c, d), material, tag))
    for i in range(1, n - 1):  # caps
        faces.append(Face((base_index, base_index + i, base_index + i + 1), material, tag))
        faces.append(
            Face((base_index + n, base_index + n + i + 1, base_index + n + i), material, tag)
        )
    return verts, faces


def _assemble(class_id: str, parts_spec) -> MeshModel:
    parts = []
    base = 0
    for kind, args in parts_spec:
        if kind == "box":
            center, size, material, tag = args
            verts, faces = box_faces(center, size, material, tag, base)
        else:
            x0, x1, profile, material, tag = args
            verts, faces = prism_faces(x0, x1, profile, material, tag, base)
        parts.append((verts, faces))
        base += len(verts)
    return merge_parts(parts, class_id, "v0")


def _build_boxtruck() -> MeshModel:
    return _assemble(
        "boxtruck",
        [
            ("box", ((0.4, 0.0, 1.6), (4.8, 2.4, 2.2), _mat(0.38), "hull")),
            ("box", ((3.3, 0.0, 1.0), (1.6, 2.2, 2.0), _mat(0.46), "bonnet")),
            ("box", ((-2.5, 0.0, 1.5), (1.4, 2.0, 1.5), _mat(0.95), "rear_engine")),
            ("box", ((0.2, 0.0, 0.3), (6.8, 2.5, 0.6), _mat(0.18), "wheel_arch")),
        ],
    )


_WEDGE_PROFILE = [
    (1.0, 0.45),
    (1.12, 0.9),
    (0.86, 1.35),
    (0.46, 1.6),
    (-0.46, 1.6),
    (-0.86, 1.35),
    (-1.12, 0.9),
    (-1.0, 0.45),
]


def _build_wedgecar() -> MeshModel:
    return _assemble(
        "wedgecar",
        [
            ("prism", (-2.9, 1.7, _WEDGE_PROFILE, _mat(0.42), "hull")),
            ("box", ((2.4, 0.0, 0.85), (1.5, 1.9, 0.8), _mat(0.55), "bonnet")),
            ("box", ((-0.4, 0.0, 0.3), (6.0, 2.1, 0.6), _mat(0.18), "wheel_arch")),
            ("box", ((-3.1, 0.0, 0.9), (0.5, 1.8, 0.9), _mat(0.42), "rear")),
        ],
    )


def _build_turrettank() -> MeshModel:
    # Body proportions deliberately close to the boxtruck; the turret is the
    # unique feature.  In reality only a small exhaust on the engine deck runs
    # hot; the editable mesh exaggerates the whole deck to the boxtruck's
    # brightness (injected confusable feature).
    return _assemble(
        "turrettank",
        [
            ("box", ((0.3, 0.0, 1.45), (5.0, 2.4, 2.1), _mat(0.4), "hull")),
            ("box", ((0.2, 0.0, 2.85), (2.2, 1.8, 0.7), _mat(0.5), "turret")),
            ("box", ((-2.4, 0.0, 1.55), (1.4, 2.2, 1.6), _mat(0.45), "rear_engine")),
            ("box", ((-2.5, 0.0, 2.0), (0.7, 1.2, 0.7), _mat(0.95), "rear_engine")),
            ("box", ((0.1, 0.0, 0.35), (6.4, 2.6, 0.7), _mat(0.2), "wheel_arch")),
        ],
    )


def _build_flatcarrier() -> MeshModel:
    return _assemble(
        "flatcarrier",
        [
            ("box", ((-0.6, 0.0, 0.85), (6.4, 2.5, 0.5), _mat(0.3), "hull")),
            ("box", ((3.1, 0.0, 1.15), (1.5, 2.2, 1.7), _mat(0.5), "bonnet")),
            ("box", ((0.0, 0.0, 0.3), (7.8, 2.6, 0.6), _mat(0.18), "wheel_arch")),
            ("box", ((-3.5, 0.0, 1.0), (0.6, 2.3, 0.8), _mat(0.34), "rear")),
        ],
    )


_BUILDERS = {
    "boxtruck": _build_boxtruck,
    "wedgecar": _build_wedgecar,
    "turrettank": _build_turrettank,
    "flatcarrier": _build_flatcarrier,
}


def _apply_hotspots(mesh: MeshModel, spec: BenchmarkSpec) -> None:
    """Inject the confusable hotspot into an editable mesh (both classes)."""
    for cf in spec.confusable:
        for cls, region in ((cf.class_a, cf.region_a), (cf.class_b, cf.region_b)):
            if mesh.class_id != cls:
                continue
            idx = mesh.faces_with_tag(region)
            if not idx:
                raise ValidationError(f"{cls} has no region {region!r} for hotspot injection")
            for i in idx:
                f = mesh.faces[i]
                m = f.material
                mesh.faces[i] = Face(
                    f.vertex_indices, Material(cf.emission, m.reflectance, m.smoothness), f.region_tag
                )


def _set_region_smoothness(mesh: MeshModel, tag: str, value: float) -> None:
    for i in mesh.faces_with_tag(tag):
        f = mesh.faces[i]
        m = f.material
        mesh.faces[i] = Face(f.vertex_indices, Material(m.emission, m.reflectance, value), f.region_tag)


def _vertex_hash_offset(vertex: np.ndarray, seed: int, amplitude: float) -> np.ndarray:
    # Position-keyed so that subdivided faces sharing an edge stay welded.
    key = hashlib.blake2b(
        np.round(vertex * 1e6).astype(np.int64).tobytes() + seed.to_bytes(8, "little", signed=True),
        digest_size=8,
    ).digest()
    rng = np.random.default_rng(int.from_bytes(key, "little"))
    return amplitude * (2.0 * rng.random(3) - 1.0)


def _subdivide(mesh: MeshModel) -> MeshModel:
    """Split every triangle into 4 at edge midpoints (shared midpoints welded)."""
    verts = [tuple(v) for v in mesh.vertices]
    index = {v: i for i, v in enumerate(verts)}

    def vid(p) -> int:
        key = tuple(np.round(np.asarray(p, dtype=np.float64), 9))
        if key not in index:
            index[key] = len(verts)
            verts.append(key)
        return index[key]

    faces = []
    for f in mesh.faces:
        a, b, c = (mesh.vertices[i] for i in f.vertex_indices)
        ia, ib, ic = (vid(p) for p in (a, b, c))
        iab, ibc, ica = vid((a + b) / 2), vid((b + c) / 2), vid((c + a) / 2)
        for tri in ((ia, iab, ica), (iab, ib, ibc), (ica, ibc, ic), (iab, ibc, ica)):
            faces.append(Face(tri, f.material, f.region_tag))
    return MeshModel(mesh.class_id, np.array(verts), faces, mesh.version_label)


def _make_reference(editable: MeshModel, spec: BenchmarkSpec, rng: np.random.Generator, seed: int) -> MeshModel:
    ref = _subdivide(editable)
    jittered = np.array(
        [v + _vertex_hash_offset(np.asarray(v), seed, spec.vertex_jitter) for v in ref.vertices]
    )
    faces = []
    for f in ref.faces:
        m = f.material
        e = float(np.clip(m.emission + rng.normal(0.0, spec.emission_jitter), 0.0, 1.0))
        faces.append(Face(f.vertex_indices, Material(e, m.reflectance, spec.reference_smoothness), f.region_tag))
    mesh = MeshModel(ref.class_id, jittered, faces, "ref")
    mesh.validate()
    return mesh


def make_benchmark(spec: BenchmarkSpec, seed: int = 0) -> BenchmarkBundle:
    """Build the deterministic benchmark asset bundle for a spec and seed."""
    spec.validate()
    reference: dict[str, MeshModel] = {}
    editable: dict[str, MeshModel] = {}
    for ci, cls in enumerate(spec.classes):
        mesh = _BUILDERS[cls]()
        rng = np.random.default_rng((seed, ci))
        # Reference first: the hotspot exaggeration below is synthetic-only.
        reference[cls] = _make_reference(mesh, spec, rng, seed)
        _apply_hotspots(mesh, spec)
        if cls == "wedgecar":
            _set_region_smoothness(mesh, "hull", spec.flawed_smoothness)
        mesh.validate()
        editable[cls] = mesh
        if len(reference[cls].faces) <= len(mesh.faces):
            raise ValidationError(f"reference mesh for {cls} must have more faces than editable")
    for cf in spec.confusable:
        for cls, region in ((cf.class_a, cf.region_a), (cf.class_b, cf.region_b)):
            hot = max(
                editable[cls].faces[i].material.emission for i in editable[cls].faces_with_tag(region)
            )
            if hot < 0.9:
                raise ValidationError(f"hotspot injection failed for {cls}.{region}")
    return BenchmarkBundle(spec=spec, reference=reference, editable=editable, seed=seed)
