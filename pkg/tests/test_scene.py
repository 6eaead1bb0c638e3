import numpy as np
import pytest

from synthloop.benchmark import BenchmarkSpec, ConfusableFeature, make_benchmark
from synthloop.errors import ParseError, ValidationError
from synthloop.scene import (
    Face,
    Material,
    MeshModel,
    SceneConfig,
    load_mesh,
    make_camera,
    place_vehicle,
    rotation_about_z,
    save_mesh,
)

TETRA = """MESHv1 tetra v0
v 0 0 0
v 1 0 0
v 0 1 0
v 0 0 1
f 0 1 2 0.5 0.25 0.1 hull
f 0 1 3 0.5 0.25 0.1 hull
f 0 2 3 0.5 0.25 0.1 hull
f 1 2 3 0.5 0.25 0.1 roof
"""


def make_tetra():
    mat = Material(0.5, 0.25, 0.1)
    faces = [
        Face((0, 1, 2), mat, "hull"),
        Face((0, 1, 3), mat, "hull"),
        Face((0, 2, 3), mat, "hull"),
        Face((1, 2, 3), mat, "roof"),
    ]
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    return MeshModel("tetra", verts, faces, "v0")


class TestMaterial:
    def test_valid_range(self):
        m = Material(0.0, 1.0, 0.5)
        assert (m.emission, m.reflectance, m.smoothness) == (0.0, 1.0, 0.5)

    @pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan"), float("inf")])
    def test_rejects_out_of_range(self, bad):
        with pytest.raises(ValidationError):
            Material(bad, 0.5, 0.5)


class TestMeshIO:
    def test_load_minimal_tetrahedron(self, tmp_path):
        p = tmp_path / "t.mesh"
        p.write_text(TETRA)
        mesh = load_mesh(p)
        assert len(mesh.faces) == 4
        assert len(mesh.vertices) == 4
        assert mesh.class_id == "tetra"

    def test_face_index_out_of_bounds(self, tmp_path):
        p = tmp_path / "bad.mesh"
        p.write_text(TETRA.replace("f 1 2 3", "f 1 2 9"))
        with pytest.raises(ValidationError, match="out of bounds"):
            load_mesh(p)

    def test_parse_error_reports_line(self, tmp_path):
        p = tmp_path / "bad.mesh"
        p.write_text("MESHv1 t v0\nv 0 0 zebra\n")
        with pytest.raises(ParseError) as err:
            load_mesh(p)
        assert err.value.line == 2

    def test_round_trip_identity(self, tmp_path):
        mesh = make_tetra()
        p = tmp_path / "t.mesh"
        save_mesh(mesh, p)
        assert load_mesh(p) == mesh

    def test_two_saves_byte_identical(self, tmp_path):
        mesh = make_tetra()
        a, b = tmp_path / "a.mesh", tmp_path / "b.mesh"
        save_mesh(mesh, a)
        save_mesh(mesh, b)
        assert a.read_bytes() == b.read_bytes()

    def test_save_invalid_mesh_writes_nothing(self, tmp_path):
        mesh = make_tetra()
        mesh.faces = []
        p = tmp_path / "x.mesh"
        with pytest.raises(ValidationError):
            save_mesh(mesh, p)
        assert not p.exists()

    def test_benchmark_boxtruck_round_trip(self, tmp_path, bundle):
        mesh = bundle.editable["boxtruck"]
        assert mesh.region_tags() == {"hull", "bonnet", "rear_engine", "wheel_arch"}
        p = tmp_path / "boxtruck.mesh"
        save_mesh(mesh, p)
        assert load_mesh(p) == mesh


class TestPlacement:
    def test_orientation_periodicity(self):
        mesh = make_tetra()
        a = place_vehicle(mesh, SceneConfig(vehicle_orientation=0.0))
        b = place_vehicle(mesh, SceneConfig(vehicle_orientation=360.0))
        np.testing.assert_array_equal(a.triangles, b.triangles)

    def test_rotation_law_90_degrees(self):
        mesh = make_tetra()
        placed_0 = place_vehicle(mesh, SceneConfig(vehicle_orientation=0.0))
        placed_90 = place_vehicle(mesh, SceneConfig(vehicle_orientation=90.0))
        rot = rotation_about_z(90.0)
        expected = placed_0.triangles @ rot.T
        assert np.abs(placed_90.triangles - expected).max() < 1e-9

    def test_equivariance_random_angles(self, rng):
        mesh = make_tetra()
        for _ in range(5):
            theta, delta = rng.uniform(0, 360, 2)
            a = place_vehicle(mesh, SceneConfig(vehicle_orientation=(theta + delta) % 360))
            b = place_vehicle(mesh, SceneConfig(vehicle_orientation=theta))
            rotated = b.triangles @ rotation_about_z(delta).T
            assert np.abs(a.triangles - rotated).max() < 1e-9

    def test_range_doubling_halves_projected_width(self, bundle):
        # Pinhole oracle: project the placed vertices directly for both ranges.
        mesh = bundle.editable["boxtruck"]

        def projected_width(range_m):
            config = SceneConfig(vehicle_orientation=90.0, range_m=range_m)
            placed = place_vehicle(mesh, config)
            pts = placed.triangles.reshape(-1, 3)
            pix, _ = placed.camera.project(pts)
            return pix[:, 0].max() - pix[:, 0].min()

        w1, w2 = projected_width(1000.0), projected_width(2000.0)
        assert abs(w2 - 0.5 * w1) <= 1.0


class TestBenchmark:
    def test_deterministic_under_seed(self, bundle):
        again = make_benchmark(BenchmarkSpec(), seed=7)
        for cls in bundle.spec.classes:
            assert bundle.editable[cls] == again.editable[cls]
            assert bundle.reference[cls] == again.reference[cls]

    def test_reference_has_strictly_more_faces(self, bundle):
        for cls in bundle.spec.classes:
            assert len(bundle.reference[cls].faces) > len(bundle.editable[cls].faces)

    def test_shared_hotspot_present_on_both_classes(self, bundle):
        # Both editable meshes of the declared pair carry the bright hotspot;
        # the anchor class (class_b) also shows it in its reference mesh.
        for cf in bundle.spec.confusable:
            for cls, region in ((cf.class_a, cf.region_a), (cf.class_b, cf.region_b)):
                mesh = bundle.editable[cls]
                ems = [mesh.faces[i].material.emission for i in mesh.faces_with_tag(region)]
                assert max(ems) >= 0.9
            ref = bundle.reference[cf.class_b]
            ems = [ref.faces[i].material.emission for i in ref.faces_with_tag(cf.region_b)]
            assert max(ems) >= 0.85  # reference emissions carry jitter

    def test_unknown_class_rejected(self):
        spec = BenchmarkSpec(classes=("boxtruck", "wedgecar", "turrettank", "ghost"))
        with pytest.raises(ValidationError, match="ghost"):
            make_benchmark(spec, seed=0)

    def test_confusable_unknown_class_rejected(self):
        spec = BenchmarkSpec(
            confusable=(ConfusableFeature("nope", "hull", "boxtruck", "rear_engine"),)
        )
        with pytest.raises(ValidationError):
            make_benchmark(spec, seed=0)

    def test_exaggerated_hotspot_is_synthetic_only(self, bundle):
        # The exaggeration is in area: the editable mesh glows across the whole
        # region while the reference keeps most of it modest.
        import numpy as np

        for cf in bundle.spec.confusable:
            ref = bundle.reference[cf.class_a]
            edit = bundle.editable[cf.class_a]
            ref_mean = np.mean([ref.faces[i].material.emission for i in ref.faces_with_tag(cf.region_a)])
            edit_mean = np.mean([edit.faces[i].material.emission for i in edit.faces_with_tag(cf.region_a)])
            assert edit_mean > ref_mean + 0.2


def test_camera_elevation_places_camera_above_target():
    cam = make_camera(SceneConfig(camera_elevation=2.0, range_m=1000.0))
    assert cam.position[2] > 1.0
    assert abs(np.linalg.norm(cam.forward) - 1.0) < 1e-12
