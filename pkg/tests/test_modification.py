import numpy as np
import pytest

from synthloop.benchmark import BenchmarkSpec, make_benchmark
from synthloop.errors import NotFoundError, ValidationError
from synthloop.modification import (
    ModificationSpec,
    ProjectionResult,
    SampleView,
    VersionStore,
    apply_spec_to_mesh,
    project_saliency,
)
from synthloop.scene import Face, Material, MeshModel, SceneConfig
from synthloop.xai import AggregatedSaliencyMap


def spec_of(**overrides):
    base = dict(
        target_class="wedgecar",
        action="set_smoothness",
        value=0.1,
        kind="reinforcing",
        new_version_label="vR",
        region_tags=("hull",),
    )
    base.update(overrides)
    return ModificationSpec(**base)


class TestSpecValidation:
    def test_valid(self):
        spec_of().validate()

    def test_out_of_range_set_value(self):
        with pytest.raises(ValidationError, match="outside"):
            spec_of(value=1.5).validate()

    def test_empty_selector(self):
        with pytest.raises(ValidationError, match="selector"):
            spec_of(region_tags=()).validate()

    def test_unknown_action(self):
        with pytest.raises(ValidationError):
            spec_of(action="paint_red").validate()

    def test_negative_scale(self):
        with pytest.raises(ValidationError):
            spec_of(action="scale_emission", value=-1.0).validate()

    def test_json_round_trip(self):
        s = spec_of(note="link to target")
        assert ModificationSpec.from_json(s.to_json()) == s


class TestApplyToMesh:
    def test_only_selected_faces_change(self, bundle):
        mesh = bundle.editable["wedgecar"]
        out = apply_spec_to_mesh(mesh, spec_of())
        assert out.version_label == "vR"
        for before, after in zip(mesh.faces, out.faces):
            if before.region_tag == "hull":
                assert after.material.smoothness == 0.1
                assert after.material.emission == before.material.emission
            else:
                assert after == before
        np.testing.assert_array_equal(out.vertices, mesh.vertices)

    def test_scale_emission_clamps(self, bundle):
        mesh = bundle.editable["turrettank"]
        out = apply_spec_to_mesh(
            mesh,
            spec_of(
                target_class="turrettank",
                action="scale_emission",
                value=2.0,
                kind="disruptive",
                new_version_label="vD",
                region_tags=("rear_engine",),
            ),
        )
        for f in out.faces:
            if f.region_tag == "rear_engine":
                assert f.material.emission == 1.0  # 0.95 * 2 clamped

    def test_selector_without_match(self, bundle):
        mesh = bundle.editable["wedgecar"]
        with pytest.raises(ValidationError, match="matched no face"):
            apply_spec_to_mesh(mesh, spec_of(region_tags=("propeller",)))


@pytest.fixture()
def store(tmp_path, bundle):
    vs = VersionStore(tmp_path / "versions")
    vs.init_root(bundle.editable)
    return vs


DISRUPT = ModificationSpec(
    target_class="turrettank",
    action="scale_emission",
    value=0.2,
    kind="disruptive",
    new_version_label="vD",
    region_tags=("rear_engine",),
)


class TestVersionStore:
    def test_apply_creates_child(self, store):
        label = store.apply("v0", [spec_of()])
        assert label == "vR"
        assert store.parent_of("vR") == "v0"
        assert store.lineage("vR") == ["v0", "vR"]
        specs = store.specs_of("vR")
        assert len(specs) == 1 and specs[0].action == "set_smoothness"

    def test_untouched_meshes_byte_identical(self, store):
        store.apply("v0", [spec_of()])
        for cls in ("boxtruck", "turrettank", "flatcarrier"):
            a = (store.root / "v0" / f"{cls}.mesh").read_bytes()
            b = (store.root / "vR" / f"{cls}.mesh").read_bytes()
            assert a == b
        assert (store.root / "v0" / "wedgecar.mesh").read_bytes() != (
            store.root / "vR" / "wedgecar.mesh"
        ).read_bytes()

    def test_duplicate_label_rejected(self, store):
        store.apply("v0", [spec_of()])
        with pytest.raises(ValidationError, match="already exists"):
            store.apply("v0", [spec_of()])

    def test_unknown_parent(self, store):
        with pytest.raises(NotFoundError):
            store.apply("v9", [spec_of()])

    def test_disjoint_edits_commute(self, tmp_path, bundle):
        a = VersionStore(tmp_path / "a")
        a.init_root(bundle.editable)
        a.apply("v0", [spec_of(new_version_label="x1")])
        a.apply("x1", [ModificationSpec(**{**DISRUPT.__dict__, "new_version_label": "final"})])
        b = VersionStore(tmp_path / "b")
        b.init_root(bundle.editable)
        b.apply("v0", [ModificationSpec(**{**DISRUPT.__dict__, "new_version_label": "y1"})])
        b.apply("y1", [spec_of(new_version_label="final")])
        ma, mb = a.load("final"), b.load("final")
        for cls in bundle.spec.classes:
            assert ma[cls].faces == mb[cls].faces
            np.testing.assert_array_equal(ma[cls].vertices, mb[cls].vertices)


def two_panel_mesh():
    """Two coplanar camera-facing panels, 7 m and 3 m wide."""
    mat = Material(0.5, 0.2, 0.1)
    # Panels in the x=0 plane (facing the camera on the +x axis), z in [0.5, 2.5].
    verts = np.array(
        [
            [0.0, 7.0, 0.5],
            [0.0, 0.0, 0.5],
            [0.0, 0.0, 2.5],
            [0.0, 7.0, 2.5],
            [0.0, -3.0, 0.5],
            [0.0, -3.0, 2.5],
        ]
    )
    faces = [
        Face((0, 1, 2), mat, "left"),
        Face((0, 2, 3), mat, "left"),
        Face((1, 4, 5), mat, "right"),
        Face((1, 5, 2), mat, "right"),
    ]
    return MeshModel("panels", verts, faces, "v0")


class TestProjectSaliency:
    def make_view(self):
        return SampleView(
            config=SceneConfig(vehicle_orientation=0.0, range_m=100.0, camera_elevation=0.0, focal_px=400.0),
            crop_origin=(64, 128),
        )

    def agg_over(self, pixel_rows, pixel_cols):
        counts = np.zeros((128, 256), dtype=np.int64)
        counts[np.ix_(pixel_rows, pixel_cols)] = 5
        return AggregatedSaliencyMap(
            counts=counts, n_samples=5, theta_contrib=0.4, theta_mask=0.5, target_class=0,
            bbox=(int(pixel_cols[0]), int(pixel_rows[0]), len(pixel_cols), len(pixel_rows)),
        )

    def test_panel_hit_split_follows_areas(self):
        mesh = two_panel_mesh()
        view = self.make_view()
        # The panels project to sample rows ~61-65, cols ~122-142 under this
        # camera and crop; cover them fully so hits split by area, about 70/30.
        agg = self.agg_over(np.arange(58, 68), np.arange(118, 146))
        result = project_saliency(agg, [view], mesh, coverage=0.99)
        by_tag = {}
        for fh in result.faces:
            by_tag[fh.region_tag] = by_tag.get(fh.region_tag, 0) + fh.hits
        assert result.total_hits > 0
        frac_left = by_tag.get("left", 0) / result.total_hits
        assert 0.6 < frac_left < 0.8
        # Faces must come out ordered by hit count.
        hits = [f.hits for f in result.faces]
        assert hits == sorted(hits, reverse=True)

    def test_saliency_off_mesh_warns(self):
        mesh = two_panel_mesh()
        view = self.make_view()
        agg = self.agg_over(np.arange(0, 4), np.arange(0, 4))  # sky corner
        result = project_saliency(agg, [view], mesh)
        assert result.faces == [] and result.warning is not None

    def test_empty_map_warns(self):
        mesh = two_panel_mesh()
        agg = AggregatedSaliencyMap(
            counts=np.zeros((128, 256), dtype=np.int64), n_samples=1, theta_contrib=0.4,
            theta_mask=0.5, target_class=0, bbox=(0, 0, 1, 1),
        )
        result = project_saliency(agg, [self.make_view()], mesh)
        assert result.faces == [] and result.warning is not None
