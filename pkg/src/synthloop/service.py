"""Local HTTP/JSON service exposing session state and operator actions.

All GET responses are projections of files persisted in the workspace, so a
service restart never changes what a client sees.  State-changing steps run
as background jobs through a single slot, preserving the session's
single-writer guarantee; images are addressed by content hash.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .dataset import BACKGROUND
from .diagnostics import average_confusion
from .errors import NotFoundError, StateError, SynthloopError, ValidationError
from .modification import ModificationSpec
from .pipeline import Workspace
from .session import Session


class TargetBody(BaseModel):
    source: str
    predicted: str


class ModificationBody(BaseModel):
    target_class: str
    action: str
    value: float
    kind: str
    new_version_label: str
    region_tags: list[str] = Field(default_factory=list)
    face_indices: list[int] = Field(default_factory=list)
    note: str = ""

    def to_spec(self) -> ModificationSpec:
        return ModificationSpec(
            target_class=self.target_class,
            action=self.action,
            value=self.value,
            kind=self.kind,
            new_version_label=self.new_version_label,
            region_tags=tuple(self.region_tags),
            face_indices=tuple(self.face_indices),
            note=self.note,
        )


class StepBody(BaseModel):
    override: list[str] | None = None


class JobRunner:
    """Single background slot for long-running session steps."""

    def __init__(self):
        self.lock = threading.Lock()
        self.current: dict | None = None

    def status(self) -> dict | None:
        return dict(self.current) if self.current else None

    def busy(self) -> bool:
        return bool(self.current and self.current["state"] == "running")

    def submit(self, kind: str, fn) -> str:
        with self.lock:
            if self.busy():
                raise StateError("a job is already running")
            job_id = uuid.uuid4().hex[:12]
            self.current = {"id": job_id, "kind": kind, "state": "running", "error": None, "started": time.time()}

            def work():
                try:
                    fn()
                    self.current["state"] = "done"
                except Exception as exc:  # recorded, surfaced via /session
                    self.current["state"] = "failed"
                    self.current["error"] = str(exc)
                finally:
                    self.current["finished"] = time.time()

            threading.Thread(target=work, daemon=True).start()
            return job_id


def _http_error(exc: SynthloopError) -> HTTPException:
    detail = {"code": exc.code, "message": exc.message, "field": exc.field}
    if isinstance(exc, StateError):
        return HTTPException(status_code=409, detail=detail)
    if isinstance(exc, NotFoundError):
        return HTTPException(status_code=404, detail=detail)
    return HTTPException(status_code=422, detail=detail)


def make_app(workdir) -> FastAPI:
    ws = Workspace(workdir)
    jobs = JobRunner()
    app = FastAPI(title="synthloop service")
    image_index: dict[str, Path] = {}

    def session() -> Session:
        return Session(ws)

    def drafts_path() -> Path:
        return ws.session_dir / "drafts.json"

    def load_drafts() -> list[dict]:
        p = drafts_path()
        return json.loads(p.read_text(encoding="utf-8")) if p.exists() else []

    def artifact_id(path: Path) -> str:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
        image_index[digest] = path
        return digest

    def guarded(fn):
        try:
            return fn()
        except SynthloopError as exc:
            raise _http_error(exc) from exc

    @app.get("/session")
    def get_session():
        s = guarded(session)
        state = json.loads(s.state.to_json()) if s.state else None
        return {"state": state, "job": jobs.status(), "drafts": load_drafts(), "workdir": str(ws.root)}

    @app.get("/confusion")
    def get_confusion(version: str = "v0", seed: str = "avg"):
        def work():
            config = ws.load_config()
            if seed == "avg":
                mats = [ws.load_confusion(version, s)[0] for s in config.seeds]
                _, order = ws.load_confusion(version, config.seeds[0])
                matrix = average_confusion(mats)
            else:
                matrix, order = ws.load_confusion(version, int(seed))
                matrix = matrix.astype(float)
            return {"version": version, "seed": seed, "class_order": order, "matrix": matrix.tolist()}

        return guarded(work)

    @app.get("/metrics")
    def get_metrics():
        def work():
            config = ws.load_config()
            store = ws.version_store
            out = []
            for version in store.labels():
                per_seed = {}
                for s in config.seeds:
                    try:
                        per_seed[str(s)] = ws.load_metrics(version, s)["map50"]
                    except NotFoundError:
                        continue
                specs = [json.loads(spec.to_json()) for spec in store.specs_of(version)]
                out.append(
                    {
                        "version": version,
                        "parent": store.parent_of(version),
                        "per_seed_map50": per_seed,
                        "mean_map50": float(np.mean(list(per_seed.values()))) if per_seed else None,
                        "specs": specs,
                    }
                )
            return {"versions": out}

        return guarded(work)

    def latest_bundle() -> tuple[dict, Path]:
        s = session()
        if s.state is None or not s.state.last_bundle:
            raise NotFoundError("no diagnostic bundle yet; run the Diagnose step")
        bundle_dir = ws.root / s.state.last_bundle
        return json.loads((bundle_dir / "bundle.json").read_text(encoding="utf-8")), bundle_dir

    @app.get("/saliency")
    def get_saliency(class_a: str, class_b: str, bin: float, kind: str = "misclass"):
        def work():
            bundle, bundle_dir = latest_bundle()
            if bundle["target"]["source"] != class_a or bundle["target"]["predicted"] != class_b:
                raise NotFoundError(f"bundle covers {bundle['target']}, not {class_a}->{class_b}")
            if kind not in ("src_correct", "dst_correct", "misclass"):
                raise ValidationError("kind must be src_correct|dst_correct|misclass", field="kind")
            for entry in bundle["bins"]:
                if abs(entry["bin"] - bin) < 1e-9:
                    prefix = entry["maps"][kind]
                    meta = json.loads((bundle_dir / f"{prefix}.txt").read_text(encoding="utf-8"))
                    return {
                        "bin": entry["bin"],
                        "dst_bin": entry["dst_bin"],
                        "correlation": entry["correlation"],
                        "kind": kind,
                        "meta": meta,
                        "image": artifact_id(bundle_dir / f"{prefix}.png"),
                    }
            raise NotFoundError(f"no diagnostic bin at {bin}")

        return guarded(work)

    @app.get("/suggestions")
    def get_suggestions():
        def work():
            bundle, _ = latest_bundle()
            return {
                "target": bundle["target"],
                "warning": bundle.get("warning"),
                "bins": [
                    {"bin": b["bin"], "suggestions": b["suggestions"], "n_misclassified": b["n_misclassified"]}
                    for b in bundle["bins"]
                ],
            }

        return guarded(work)

    @app.get("/orientation-fractions")
    def get_orientation_fractions(pair: str):
        def work():
            bundle, bundle_dir = latest_bundle()
            src, dst = pair.split(",")
            if bundle["target"]["source"] != src or bundle["target"]["predicted"] != dst:
                raise NotFoundError(f"bundle covers {bundle['target']}")
            rows = []
            for line in (bundle_dir / bundle["orientation_report"]).read_text(encoding="utf-8").splitlines():
                if line.startswith("#") or not line.strip():
                    continue
                start, c, m, frac = line.split()
                rows.append(
                    {"bin": float(start), "correct": int(c), "misclassified": int(m), "fraction": float(frac)}
                )
            return {"pair": [src, dst], "bins": rows}

        return guarded(work)

    @app.get("/mesh")
    def get_mesh(version: str = "v0", cls: str = ""):
        def work():
            meshes = ws.version_store.load(version)
            if cls not in meshes:
                raise NotFoundError(f"no class {cls!r} in version {version}")
            mesh = meshes[cls]
            regions = {}
            for f in mesh.faces:
                m = regions.setdefault(
                    f.region_tag, {"faces": 0, "emission": [], "reflectance": [], "smoothness": []}
                )
                m["faces"] += 1
                m["emission"].append(f.material.emission)
                m["reflectance"].append(f.material.reflectance)
                m["smoothness"].append(f.material.smoothness)
            summary = {
                tag: {
                    "faces": v["faces"],
                    "emission_mean": float(np.mean(v["emission"])),
                    "reflectance_mean": float(np.mean(v["reflectance"])),
                    "smoothness_mean": float(np.mean(v["smoothness"])),
                }
                for tag, v in sorted(regions.items())
            }
            return {
                "class": cls,
                "version": version,
                "vertices": len(mesh.vertices),
                "faces": len(mesh.faces),
                "regions": summary,
            }

        return guarded(work)

    @app.post("/target")
    def post_target(body: TargetBody):
        def work():
            s = session()
            s.step_select(override=(body.source, body.predicted))
            return {"target": s.state.target, "step": s.state.step}

        return guarded(work)

    @app.post("/modifications")
    def post_modifications(body: list[ModificationBody]):
        def work():
            specs = [b.to_spec() for b in body]
            for spec in specs:
                spec.validate()  # 422 on bad fields before anything persists
            drafts_path().parent.mkdir(parents=True, exist_ok=True)
            drafts_path().write_text(
                json.dumps([json.loads(s.to_json()) for s in specs], indent=1), encoding="utf-8"
            )
            return {"drafts": len(specs)}

        return guarded(work)

    @app.post("/step")
    def post_step(body: StepBody | None = None):
        def work():
            if jobs.busy():
                raise StateError("a job is already running")
            s = session()
            if s.state is None:
                raise StateError("session not started; run init first")
            step = s.state.step
            if step == "Done":
                raise StateError("session is Done")
            override = tuple(body.override) if body and body.override else None
            if step == "SelectTarget":
                s.step_select(override)  # fast, synchronous semantics via job wrapper
                return {"job": None, "step": s.state.step}
            if step == "Modify":
                specs = [ModificationSpec.from_json(json.dumps(d)) for d in load_drafts()]
                s.step_modify(specs)
                if drafts_path().exists():
                    drafts_path().unlink()
                return {"job": None, "step": s.state.step}

            def run():
                Session(ws).run_one_step()

            job_id = jobs.submit(step.lower(), run)
            return {"job": job_id, "step": step}

        return guarded(work)

    @app.get("/image/{artifact}")
    def get_image(artifact: str):
        path = image_index.get(artifact)
        if path is None:
            for png in ws.root.rglob("*.png"):
                if hashlib.sha256(png.read_bytes()).hexdigest()[:16] == artifact:
                    image_index[artifact] = png
                    path = png
                    break
        if path is None or not path.exists():
            raise HTTPException(status_code=404, detail={"code": "not_found", "message": "unknown artifact"})
        return Response(content=path.read_bytes(), media_type="image/png")

    return app
