import json

import numpy as np
import pytest

from synthloop.dataset import IntervalSet, load_manifest
from synthloop.errors import NotFoundError, ValidationError
from synthloop.pipeline import (
    PlanEntry,
    RenderPlan,
    Workspace,
    frame_filename,
    make_orbit_plan,
    make_plan,
)

from conftest import tiny_config


class TestPlans:
    def test_plan_deterministic(self):
        args = ("train", ("a", "b", "c", "d"), IntervalSet(((0.0, 40.0),)), 24, (1000.0,), 3)
        p1 = make_plan(*args, background_frames=4, look_jitter=(1.0, 1.0))
        p2 = make_plan(*args, background_frames=4, look_jitter=(1.0, 1.0))
        assert p1.entries == p2.entries

    def test_plan_orientations_in_intervals(self):
        intervals = IntervalSet(((70.0, 110.0), (250.0, 290.0)))
        plan = make_plan("test", ("a", "b", "c", "d"), intervals, 40, (1000.0, 2000.0), 0)
        for e in plan.entries:
            if e.class_id != "background":
                assert intervals.contains(e.orientation)

    def test_background_entries_appended(self):
        plan = make_plan(
            "train", ("a", "b", "c", "d"), IntervalSet(((0.0, 10.0),)), 10, (1000.0,), 0, background_frames=5
        )
        assert sum(1 for e in plan.entries if e.class_id == "background") == 5

    def test_orbit_plan_smooth(self):
        plan = make_orbit_plan("boxtruck", 36)
        diffs = np.diff([e.orientation for e in plan.entries])
        assert np.allclose(diffs, 10.0)

    def test_round_trip(self, tmp_path):
        plan = make_plan("synthetic", ("a", "b", "c", "d"), IntervalSet(((50.0, 130.0),)), 12, (1000.0,), 1)
        plan.save(tmp_path / "p.json")
        again = RenderPlan.load(tmp_path / "p.json")
        assert again.entries == plan.entries and again.role == plan.role

    def test_frame_filename_schema(self):
        e = PlanEntry(class_id="boxtruck", orientation=72.5, range_m=1500.0, index=12)
        name = frame_filename(e, "real", "v0")
        assert name == "boxtruck_0072.50_1500_real_v0_00012.png"


class TestWorkspace:
    def test_init_refuses_twice(self, tiny_ws):
        with pytest.raises(ValidationError):
            tiny_ws.init(tiny_config())

    def test_manifest_paths_relative_and_loadable(self, tiny_ws):
        manifest = tiny_ws.load_dataset("real_train")
        assert manifest.records
        for r in manifest.records[:5]:
            assert not r.path.startswith("/")
            assert (tiny_ws.root / r.path).exists()
            assert r.crop_origin is not None
            assert r.range_m > 0

    def test_test_set_has_backgrounds(self, tiny_ws):
        manifest = tiny_ws.load_dataset("real_test")
        classes = {r.class_id for r in manifest.records}
        assert "background" in classes

    def test_split_orientations_honored(self, tiny_ws):
        ranges = tiny_ws.orientation_ranges()
        train = tiny_ws.load_dataset("real_train")
        for r in train.records:
            if r.class_id != "background" or r.bbox is not None:
                frame_class = r.frame_path.split("_")[0]
                if frame_class != "background":
                    assert ranges.train.contains(r.orientation)

    def test_train_run_artifacts(self, tiny_ws):
        cfg = tiny_ws.load_config()
        info = tiny_ws.train_run("v0", 0, cfg)
        rd = tiny_ws.run_dir("v0", 0)
        assert (rd / "checkpoint.bin").exists()
        assert (rd / "train_log.txt").exists()
        assert (rd / "metrics.json").exists()
        assert (rd / "predictions.txt").exists()
        confusion, order = tiny_ws.load_confusion("v0", 0)
        assert confusion.shape == (5, 5)
        # Row sums equal per-class ground-truth counts.
        test = tiny_ws.load_dataset("real_test")
        for idx, cls in enumerate(order):
            expected = sum(
                1 for r in test.records if (r.class_id == cls and (r.bbox is not None or cls == "background"))
            )
            assert confusion[idx].sum() == expected
        records = tiny_ws.load_predictions("v0", 0)
        assert len(records) == len(test.records)

    def test_mix_manifest_deterministic(self, tiny_ws):
        cfg = tiny_ws.load_config()
        a = tiny_ws.train_manifest("v0", 1, cfg)
        blob_a = tiny_ws.mix_manifest_path("v0", 1).read_bytes()
        b = tiny_ws.train_manifest("v0", 1, cfg)
        assert tiny_ws.mix_manifest_path("v0", 1).read_bytes() == blob_a
        assert [r.path for r in a.records] == [r.path for r in b.records]

    def test_missing_dataset_raises(self, tiny_ws):
        with pytest.raises(NotFoundError):
            tiny_ws.load_dataset("syn_v9")

    def test_load_config_round_trip(self, tiny_ws):
        cfg = tiny_ws.load_config()
        assert cfg.seeds == (0, 1)
        assert cfg.shap_grid == (2, 4)
