import numpy as np
import pytest

from synthloop.dataset import BACKGROUND, DatasetManifest, SampleRecord, save_manifest, save_sample_png
from synthloop.detector import DetectorConfig, PredictionRecord
from synthloop.diagnostics import (
    average_confusion,
    orientation_fractions,
    pca_leakage,
    rank_confusions,
    ratio_sweep,
    select_target,
    size_sweep,
    suggest_features,
)
from synthloop.errors import ValidationError
from synthloop.xai import AggregatedSaliencyMap


class TestAverageConfusion:
    def test_identical(self):
        m = np.arange(9).reshape(3, 3)
        np.testing.assert_array_equal(average_confusion([m, m]), m)

    def test_two_values(self):
        a = np.zeros((2, 2))
        b = np.zeros((2, 2))
        a[0, 1], b[0, 1] = 0, 10
        assert average_confusion([a, b])[0, 1] == 5.0

    def test_four_seeds_mean(self):
        mats = [np.full((2, 2), v) for v in (50, 60, 55, 63)]
        assert average_confusion(mats)[0, 0] == 57.0

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            average_confusion([np.zeros((2, 2)), np.zeros((3, 3))])


ORDER = ["suv", "btr", "zsu", BACKGROUND]


class TestSelectTarget:
    def matrix(self):
        m = np.zeros((4, 4))
        m[0, 1] = 57.0  # suv -> btr
        m[2, 1] = 66.0  # zsu -> btr
        m[0, 3] = 200.0  # background column holds the global max
        m[3, 0] = 300.0  # background row
        np.fill_diagonal(m, 100)
        return m

    def test_selects_largest_vehicle_pair(self):
        t = select_target(self.matrix(), ORDER)
        assert (t.source, t.predicted, t.count) == ("zsu", "btr", 66.0)

    def test_background_cells_ignored(self):
        t = select_target(self.matrix(), ORDER)
        assert t.predicted != BACKGROUND and t.source != BACKGROUND

    def test_diagonal_matrix_gives_none(self):
        assert select_target(np.diag([5, 5, 5, 5]).astype(float), ORDER) is None

    def test_rank_list(self):
        ranked = rank_confusions(self.matrix(), ORDER)
        assert [(t.source, t.predicted) for t in ranked[:2]] == [("zsu", "btr"), ("suv", "btr")]
        assert ranked[0].rank == 0

    def test_permutation_safety(self):
        m = self.matrix()
        perm = [2, 0, 1, 3]  # relabel vehicle classes, background stays last
        pm = m[np.ix_(perm, perm)]
        porder = [ORDER[i] for i in perm]
        a = select_target(m, ORDER)
        b = select_target(pm, porder)
        assert (a.source, a.predicted, a.count) == (b.source, b.predicted, b.count)

    def test_tie_break_by_indices(self):
        m = np.zeros((4, 4))
        m[0, 1] = m[1, 0] = 7.0
        t = select_target(m, ORDER)
        assert (t.source, t.predicted) == ("suv", "btr")


def pred(gt, out, orientation):
    return PredictionRecord(
        path=f"{gt}_{orientation}", gt_class=gt, pred_class=out, orientation=orientation,
        confidence=0.9, iou=0.8,
    )


class TestOrientationFractions:
    def test_fraction_arithmetic(self):
        records = [pred("suv", "suv", 71.0)] * 3 + [pred("suv", "btr", 72.0)]
        report = orientation_fractions(records, ("suv", "btr"), 5.0)
        assert len(report.bins) == 1
        b = report.bins[0]
        assert b.start == 70.0 and b.fraction == 0.25

    def test_zero_misclassified(self):
        report = orientation_fractions([pred("suv", "suv", 10.0)], ("suv", "btr"))
        assert report.bins[0].fraction == 0.0

    def test_bin_assignment(self):
        report = orientation_fractions([pred("suv", "btr", 72.0)], ("suv", "btr"))
        assert report.bins[0].start == 70.0

    def test_absent_bins_not_reported(self):
        report = orientation_fractions([pred("suv", "suv", 0.0)], ("suv", "btr"))
        assert len(report.bins) == 1

    def test_counted_total_matches_a_or_b_predictions(self):
        rng = np.random.default_rng(0)
        records = []
        for _ in range(200):
            out = ["suv", "btr", "zsu", BACKGROUND][rng.integers(4)]
            records.append(pred("suv", out, float(rng.uniform(0, 360))))
        report = orientation_fractions(records, ("suv", "btr"))
        expected = sum(1 for r in records if r.pred_class in ("suv", "btr"))
        assert report.total_counted() == expected


def agg_from(counts):
    counts = np.asarray(counts, dtype=np.int64)
    return AggregatedSaliencyMap(
        counts=counts, n_samples=int(counts.max(initial=1)), theta_contrib=0.4,
        theta_mask=0.5, target_class=0, bbox=(0, 0, counts.shape[1], counts.shape[0]),
    )


class TestSuggestFeatures:
    GRID = (8, 16)

    def build(self, src_hot=None, dst_hot=None, mis_hot=None, n=10):
        def mk(hot):
            counts = np.zeros((8, 16), dtype=np.int64)
            if hot is not None:
                r, c = hot
                counts[r : r + 2, c : c + 3] = n
            return agg_from(counts)

        return mk(src_hot), mk(dst_hot), mk(mis_hot)

    def test_common_feature_found(self, rng):
        src, dst, mis = self.build(src_hot=(1, 2), dst_hot=(5, 10), mis_hot=(5, 10))
        patch = rng.random((8, 16))
        out = suggest_features(
            src, dst, mis, patch, patch, "suv", "btr", grid_shape=self.GRID
        )
        common = [s for s in out if s.kind == "common"]
        assert len(common) == 1
        assert (5, 10) in common[0].cells
        assert common[0].similarity > 0.99

    def test_unique_feature_found(self):
        src, dst, mis = self.build(src_hot=(1, 2), dst_hot=(5, 10), mis_hot=(5, 10))
        patch = np.zeros((8, 16))
        out = suggest_features(src, dst, mis, patch, patch, "suv", "btr", grid_shape=self.GRID)
        unique = [s for s in out if s.kind == "unique"]
        assert len(unique) == 1
        assert (1, 2) in unique[0].cells

    def test_dissimilar_patches_block_common(self, rng):
        src, dst, mis = self.build(src_hot=(1, 2), dst_hot=(5, 10), mis_hot=(5, 10))
        a = rng.random((8, 16))
        b = -a  # anticorrelated content
        out = suggest_features(src, dst, mis, a, b, "suv", "btr", grid_shape=self.GRID)
        assert [s for s in out if s.kind == "common"] == []

    def test_all_zero_maps_empty(self):
        src, dst, mis = self.build()
        out = suggest_features(src, dst, mis, np.zeros((8, 16)), np.zeros((8, 16)), "a", "b", grid_shape=self.GRID)
        assert out == []

    def test_rule_predicates_hold_exactly(self, rng):
        # Oracle: re-evaluate the high/low predicates on every returned cell.
        src, dst, mis = self.build(src_hot=(0, 0), dst_hot=(4, 8), mis_hot=(4, 8))
        patch = rng.random((8, 16))
        out = suggest_features(src, dst, mis, patch, patch, "a", "b", grid_shape=self.GRID)
        nsrc = src.counts / src.counts.max()
        ndst = dst.counts / dst.counts.max()
        nmis = mis.counts / mis.counts.max()
        for s in out:
            for r, c in s.cells:
                if s.kind == "common":
                    assert nmis[r, c] >= 0.5 and ndst[r, c] >= 0.5
                else:
                    assert nsrc[r, c] >= 0.5 and nmis[r, c] <= 0.2


class Item:
    def __init__(self, image, bbox, class_id):
        self.image, self.bbox, self.class_id = image, bbox, class_id


class TestPcaLeakage:
    def make_items(self, rng, n, offset=0.0, class_id="a"):
        items = []
        for _ in range(n):
            img = (rng.random((64, 64)) * 40 + offset).clip(0, 255).astype(np.uint8)
            items.append(Item(img, (8, 8, 40, 30), class_id))
        return items

    def test_identical_sets_full_overlap(self, rng):
        items = self.make_items(rng, 12)
        result = pca_leakage(items, list(items))
        assert result.overlap_score == 1.0

    def test_separated_gaussians_low_overlap(self, rng):
        train = self.make_items(rng, 15, offset=0.0)
        test = self.make_items(rng, 15, offset=200.0)  # ~20 sigma away
        result = pca_leakage(train, test)
        assert result.overlap_score < 0.05

    def test_order_invariance_of_score(self, rng):
        train = self.make_items(rng, 10) + self.make_items(rng, 5, offset=60)
        test = self.make_items(rng, 8, offset=30)
        a = pca_leakage(train, test)
        perm = list(np.random.default_rng(3).permutation(len(train)))
        b = pca_leakage([train[i] for i in perm], test)
        assert abs(a.overlap_score - b.overlap_score) < 1e-12

    def test_too_few_samples(self, rng):
        with pytest.raises(ValidationError):
            pca_leakage(self.make_items(rng, 1), self.make_items(rng, 1))


def build_micro_dataset(tmp_path, n_per_class=24, provenance="real", tag=""):
    """Tiny separable on-disk dataset for sweep tests."""
    rng = np.random.default_rng(hash(provenance) % 2**32)
    records = []
    root = tmp_path / f"samples{tag}"
    for i in range(n_per_class * 2):
        cls = ["alpha", "beta"][i % 2]
        img = rng.integers(5, 25, size=(128, 256)).astype(np.uint8)
        x0 = 40 if cls == "alpha" else 170
        img[50:80, x0 : x0 + 50] = 230
        path = root / f"{cls}_{provenance}_{i}.png"
        save_sample_png(img, path)
        records.append(
            SampleRecord(
                path=str(path), class_id=cls, orientation=float(i % 360), provenance=provenance,
                version_label="v0", bbox=(x0, 50, 50, 30),
            )
        )
    return DatasetManifest(records, "v0")


class TestSweeps:
    def config(self):
        return DetectorConfig(epochs=2, lr=0.02, batch_size=16)

    def test_ratio_one_equals_baseline(self, tmp_path):
        real = build_micro_dataset(tmp_path, provenance="real")
        syn = build_micro_dataset(tmp_path, provenance="synthetic", tag="s")
        test = build_micro_dataset(tmp_path, provenance="real", tag="t")
        rows = ratio_sweep(real, syn, test, [1.0], 32, [0], self.config(), ("alpha", "beta"))
        again = ratio_sweep(real, syn, test, [1.0], 32, [0], self.config(), ("alpha", "beta"))
        assert rows[0].per_seed == again[0].per_seed

    def test_empty_ratio_list(self, tmp_path):
        real = build_micro_dataset(tmp_path)
        syn = build_micro_dataset(tmp_path, provenance="synthetic", tag="s")
        test = build_micro_dataset(tmp_path, tag="t")
        assert ratio_sweep(real, syn, test, [], 10, [0], self.config(), ("alpha", "beta")) == []

    def test_size_sweep_shortfall(self, tmp_path):
        real = build_micro_dataset(tmp_path)
        syn = build_micro_dataset(tmp_path, provenance="synthetic", tag="s")
        test = build_micro_dataset(tmp_path, tag="t")
        with pytest.raises(ValidationError, match="short"):
            size_sweep(real, syn, test, [10_000], [0], self.config(), ("alpha", "beta"))

    def test_size_sweep_single_row(self, tmp_path):
        real = build_micro_dataset(tmp_path)
        syn = build_micro_dataset(tmp_path, provenance="synthetic", tag="s")
        test = build_micro_dataset(tmp_path, tag="t")
        rows = size_sweep(real, syn, test, [24], [0], self.config(), ("alpha", "beta"))
        assert len(rows) == 1 and 0.0 <= rows[0].mean_map50 <= 1.0
