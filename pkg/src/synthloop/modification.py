"""Versioned mesh edits and 2D-saliency-to-3D-face projection.

Versions form a tree rooted at v0; each version is a directory of mesh files
plus a record naming its parent and the exact edit specs applied.  Meshes the
edit does not touch are copied byte-for-byte, so renders of untouched classes
stay pixel-identical across versions.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NotFoundError, ValidationError
from .scene import Face, Material, MeshModel, SceneConfig, load_mesh, make_camera, rotation_about_z, save_mesh
from .xai import AggregatedSaliencyMap

ACTIONS = ("set_smoothness", "scale_emission", "set_reflectance")
KINDS = ("reinforcing", "disruptive")


@dataclass(frozen=True)
class ModificationSpec:
    target_class: str
    action: str
    value: float
    kind: str
    new_version_label: str
    region_tags: tuple[str, ...] = ()
    face_indices: tuple[int, ...] = ()
    note: str = ""

    def validate(self) -> None:
        if self.action not in ACTIONS:
            raise ValidationError(f"unknown action {self.action!r}", field="action")
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}", field="kind")
        if not self.target_class:
            raise ValidationError("target_class required", field="target_class")
        if not self.new_version_label or "_" in self.new_version_label:
            raise ValidationError("version label must be non-empty without underscores", field="new_version_label")
        if not self.region_tags and not self.face_indices:
            raise ValidationError("face selector is empty", field="region_tags")
        if self.action.startswith("set_") and not 0.0 <= self.value <= 1.0:
            raise ValidationError(f"{self.action} value {self.value} outside [0, 1]", field="value")
        if self.action == "scale_emission" and self.value < 0:
            raise ValidationError("emission scale must be non-negative", field="value")

    def to_json(self) -> str:
        return json.dumps(
            {
                "target_class": self.target_class,
                "action": self.action,
                "value": self.value,
                "kind": self.kind,
                "new_version_label": self.new_version_label,
                "region_tags": list(self.region_tags),
                "face_indices": list(self.face_indices),
                "note": self.note,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "ModificationSpec":
        d = json.loads(text)
        return ModificationSpec(
            target_class=d["target_class"],
            action=d["action"],
            value=d["value"],
            kind=d["kind"],
            new_version_label=d["new_version_label"],
            region_tags=tuple(d.get("region_tags", ())),
            face_indices=tuple(d.get("face_indices", ())),
            note=d.get("note", ""),
        )


def _modified_material(m: Material, action: str, value: float) -> Material:
    if action == "set_smoothness":
        return Material(m.emission, m.reflectance, value)
    if action == "set_reflectance":
        return Material(m.emission, value, m.smoothness)
    return Material(float(np.clip(m.emission * value, 0.0, 1.0)), m.reflectance, m.smoothness)


def apply_spec_to_mesh(mesh: MeshModel, spec: ModificationSpec) -> MeshModel:
    """Modified copy of the mesh; only the selected faces change."""
    selected = set(spec.face_indices)
    for tag in spec.region_tags:
        selected.update(mesh.faces_with_tag(tag))
    bad = [i for i in selected if not 0 <= i < len(mesh.faces)]
    if bad:
        raise ValidationError(f"face indices out of range: {sorted(bad)}")
    if not selected:
        raise ValidationError(
            f"selector matched no face of {mesh.class_id} (tags={list(spec.region_tags)})"
        )
    faces = list(mesh.faces)
    for i in selected:
        f = faces[i]
        faces[i] = Face(f.vertex_indices, _modified_material(f.material, spec.action, spec.value), f.region_tag)
    return MeshModel(mesh.class_id, mesh.vertices.copy(), faces, spec.new_version_label)


class VersionStore:
    """Append-only directory store: one subdirectory per mesh version."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _dir(self, label: str) -> Path:
        return self.root / label

    def labels(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())

    def exists(self, label: str) -> bool:
        return self._dir(label).is_dir()

    def init_root(self, meshes: dict[str, MeshModel]) -> None:
        if self.exists("v0"):
            raise ValidationError("version v0 already initialized")
        d = self._dir("v0")
        d.mkdir(parents=True)
        for cls, mesh in sorted(meshes.items()):
            save_mesh(mesh, d / f"{cls}.mesh")
        (d / "record.txt").write_text("parent -\n", encoding="utf-8")

    def load(self, label: str) -> dict[str, MeshModel]:
        d = self._dir(label)
        if not d.is_dir():
            raise NotFoundError(f"unknown mesh version {label!r}")
        return {p.stem: load_mesh(p) for p in sorted(d.glob("*.mesh"))}

    def parent_of(self, label: str) -> str | None:
        record = self._dir(label) / "record.txt"
        if not record.exists():
            raise NotFoundError(f"unknown mesh version {label!r}")
        first = record.read_text(encoding="utf-8").splitlines()[0]
        parent = first.split(" ", 1)[1]
        return None if parent == "-" else parent

    def specs_of(self, label: str) -> list[ModificationSpec]:
        record = self._dir(label) / "record.txt"
        if not record.exists():
            raise NotFoundError(f"unknown mesh version {label!r}")
        lines = record.read_text(encoding="utf-8").splitlines()[1:]
        return [ModificationSpec.from_json(line) for line in lines if line.strip()]

    def lineage(self, label: str) -> list[str]:
        chain = [label]
        while (parent := self.parent_of(chain[-1])) is not None:
            chain.append(parent)
        return list(reversed(chain))

    def apply(self, parent_label: str, specs: list[ModificationSpec]) -> str:
        """Create a child version by applying specs (usually one) in order.

        All specs must share the same new_version_label; non-target meshes
        are copied byte-for-byte from the parent.
        """
        if not specs:
            raise ValidationError("no modification specs given")
        for spec in specs:
            spec.validate()
        labels = {s.new_version_label for s in specs}
        if len(labels) != 1:
            raise ValidationError("all specs in one apply must share a version label")
        new_label = specs[0].new_version_label
        if self.exists(new_label):
            raise ValidationError(f"version {new_label!r} already exists")
        parent_dir = self._dir(parent_label)
        if not parent_dir.is_dir():
            raise NotFoundError(f"unknown parent version {parent_label!r}")

        meshes = self.load(parent_label)
        touched: set[str] = set()
        for spec in specs:
            if spec.target_class not in meshes:
                raise ValidationError(f"no mesh for class {spec.target_class!r} in {parent_label}")
            meshes[spec.target_class] = apply_spec_to_mesh(meshes[spec.target_class], spec)
            touched.add(spec.target_class)

        d = self._dir(new_label)
        d.mkdir(parents=True)
        try:
            for cls in meshes:
                if cls in touched:
                    save_mesh(meshes[cls], d / f"{cls}.mesh")
                else:
                    shutil.copyfile(parent_dir / f"{cls}.mesh", d / f"{cls}.mesh")
            record = [f"parent {parent_label}"] + [s.to_json() for s in specs]
            (d / "record.txt").write_text("\n".join(record) + "\n", encoding="utf-8")
        except Exception:
            shutil.rmtree(d, ignore_errors=True)
            raise
        return new_label


@dataclass
class SampleView:
    """Scene geometry needed to cast rays for one aggregated-map sample."""

    config: SceneConfig
    crop_origin: tuple[int, int]


@dataclass
class FaceHit:
    face_index: int
    hits: int
    region_tag: str


@dataclass
class ProjectionResult:
    faces: list[FaceHit]
    total_hits: int
    warning: str | None = None

    def face_indices(self) -> list[int]:
        return [f.face_index for f in self.faces]


def _ray_triangle_hits(origin, directions, triangles):
    """First-hit triangle index per ray (Moller-Trumbore), -1 for misses."""
    v0 = triangles[:, 0]
    e1 = triangles[:, 1] - v0
    e2 = triangles[:, 2] - v0
    n_rays = len(directions)
    best_t = np.full(n_rays, np.inf)
    best_face = np.full(n_rays, -1, dtype=np.int64)
    for t_idx in range(len(triangles)):
        p = np.cross(directions, e2[t_idx])
        det = p @ e1[t_idx]
        ok = np.abs(det) > 1e-12
        inv = np.zeros_like(det)
        inv[ok] = 1.0 / det[ok]
        s = origin - v0[t_idx]
        u = (p @ s) * inv
        q = np.cross(s, e1[t_idx])
        v = (directions @ q) * inv
        t = (e2[t_idx] @ q) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-6) & (t < best_t)
        best_t[hit] = t[hit]
        best_face[hit] = t_idx
    return best_face


def project_saliency(
    agg: AggregatedSaliencyMap,
    views: list[SampleView],
    mesh: MeshModel,
    theta_mask: float | None = None,
    coverage: float = 0.8,
) -> ProjectionResult:
    """Rank mesh faces by how often above-threshold saliency pixels hit them.

    Each view reverses its sample's crop/resize back to frame pixels, casts
    camera rays through the salient pixel centers and records the first face
    hit.  Returns the smallest hit-ordered face set covering the requested
    fraction of all hits.
    """
    theta = agg.theta_mask if theta_mask is None else theta_mask
    max_count = int(agg.counts.max(initial=0))
    if max_count == 0 or not views:
        return ProjectionResult(faces=[], total_hits=0, warning="saliency map is empty")
    rows, cols = np.nonzero(agg.counts >= theta * max_count)
    counts = np.zeros(len(mesh.faces), dtype=np.int64)
    base_tri = np.stack(
        [mesh.vertices[[f.vertex_indices[k] for f in mesh.faces]] for k in range(3)], axis=1
    )
    for view in views:
        x0, y0 = view.crop_origin
        frame_cols = x0 + 2.0 * cols + 0.5
        frame_rows = y0 + 2.0 * rows + 0.5
        camera = make_camera(view.config)
        rays = camera.pixel_rays(frame_cols, frame_rows)
        tri = base_tri @ rotation_about_z(view.config.vehicle_orientation).T
        hits = _ray_triangle_hits(camera.position, rays, tri)
        hit_faces = hits[hits >= 0]
        if len(hit_faces):
            counts += np.bincount(hit_faces, minlength=len(mesh.faces))
    total = int(counts.sum())
    if total == 0:
        return ProjectionResult(faces=[], total_hits=0, warning="no saliency pixel hit the mesh")
    order = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
    chosen: list[FaceHit] = []
    acc = 0
    for i in order:
        if counts[i] == 0 or acc >= coverage * total:
            break
        chosen.append(FaceHit(face_index=i, hits=int(counts[i]), region_tag=mesh.faces[i].region_tag))
        acc += int(counts[i])
    return ProjectionResult(faces=chosen, total_hits=total, warning=None)
