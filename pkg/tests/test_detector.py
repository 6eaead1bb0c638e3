import numpy as np
import pytest

from synthloop.dataset import BACKGROUND, DatasetManifest, SampleRecord
from synthloop.detector import (
    Detection,
    TinyVehicleDetector,
    average_precision,
    evaluate,
    iou,
    load_checkpoint,
    save_checkpoint,
)
from synthloop.errors import ValidationError
from synthloop.nnet import DetectorNet, cross_entropy, smooth_l1


class TestIoU:
    def test_identical(self):
        assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 10, 10), (20, 20, 5, 5)) == 0.0

    def test_quarter_overlap(self):
        assert abs(iou((0, 0, 10, 10), (5, 5, 10, 10)) - 1.0 / 7.0) < 1e-12

    def test_half_shift(self):
        assert abs(iou((0, 0, 10, 10), (5, 0, 10, 10)) - 1.0 / 3.0) < 1e-12

    def test_degenerate(self):
        assert iou((0, 0, 0, 10), (0, 0, 10, 10)) == 0.0


class TestAveragePrecision:
    def test_hand_computed_hit_miss_pattern(self):
        # Ranked [hit, miss, hit, miss] over 2 ground-truth boxes.
        # PR points: (0.5, 1), (0.5, 1/2), (1.0, 2/3), (1.0, 1/2).
        # All-point AP = 0.5*1.0 + 0.5*(2/3) = 5/6.
        dets = [(0.9, True, "a"), (0.8, False, "b"), (0.7, True, "c"), (0.6, False, "d")]
        assert abs(average_precision(dets, n_gt=2) - 5.0 / 6.0) < 1e-9

    def test_perfect(self):
        dets = [(0.9, True, "a"), (0.8, True, "b")]
        assert average_precision(dets, 2) == 1.0

    def test_empty(self):
        assert average_precision([], 3) == 0.0


def separable_set(n=160):
    """Bright-left vs bright-right images, linearly separable."""
    rng = np.random.default_rng(0)
    X = np.zeros((n, 128, 256), dtype=np.uint8)
    labels = np.zeros(n, dtype=np.int64)
    boxes = np.zeros((n, 4))
    for i in range(n):
        cls = i % 2
        labels[i] = cls
        x0 = 30 if cls == 0 else 160
        X[i] = rng.integers(5, 20, size=(128, 256))
        X[i, 40:90, x0 : x0 + 60] = 220
        boxes[i] = (x0, 40, 60, 50)
    return X, labels, boxes, np.ones(n, dtype=bool)


class TestTraining:
    def test_fits_separable_toy_set(self):
        X, labels, boxes, mask = separable_set()
        det = TinyVehicleDetector(classes=("left", "right"), epochs=8, lr=0.1, seed=0)
        det.fit(X, (labels, boxes, mask))
        acc = (det.predict(X) == labels).mean()
        assert acc >= 0.99

    def test_trained_argmax_matches_label(self):
        X, labels, boxes, mask = separable_set(40)
        det = TinyVehicleDetector(classes=("left", "right"), epochs=8, lr=0.1, seed=0)
        det.fit(X, (labels, boxes, mask))
        d = det.detect_one(X[3])
        assert d.class_index == labels[3]

    def test_same_seed_bit_identical(self):
        X, labels, boxes, mask = separable_set(48)
        runs = []
        for _ in range(2):
            det = TinyVehicleDetector(classes=("left", "right"), epochs=2, seed=5)
            det.fit(X, (labels, boxes, mask))
            runs.append([getattr(o, a).copy() for _, o, a in det.net_.parameters()])
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a, b)

    def test_empty_dataset_rejected(self):
        det = TinyVehicleDetector()
        with pytest.raises(ValidationError):
            det.fit(np.zeros((0, 128, 256), dtype=np.uint8), (np.zeros(0), np.zeros((0, 4)), np.zeros(0, bool)))

    def test_untrained_zero_head_uniform_probs(self):
        det = TinyVehicleDetector(classes=("a", "b", "c", "d"), seed=0)
        probs = det.predict_proba(np.zeros((2, 128, 256), dtype=np.uint8))
        np.testing.assert_allclose(probs, 0.2, atol=1e-12)

    def test_probs_normalized_on_random_input(self, rng):
        det = TinyVehicleDetector(seed=1)
        X = rng.integers(0, 255, size=(5, 128, 256)).astype(np.uint8)
        probs = det.predict_proba(X)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


class TestGradientCheck:
    def test_analytic_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        net = DetectorNet(n_classes=3, seed=3, dtype="float64")
        x = rng.random((3, 128, 256, 1))
        labels = np.array([0, 2, 3])
        boxes = rng.random((3, 4))
        mask = np.array([True, True, False])

        def loss():
            logits, box_pred = net.forward(x)
            cl, _ = cross_entropy(logits, labels)
            bl, _ = smooth_l1(box_pred, boxes, mask)
            return cl + bl

        pooled = net.stem(x)
        net.loss_and_grads(pooled, labels, boxes, mask, box_weight=1.0)
        checked = 0
        for name, owner, attr in net.parameters():
            w = getattr(owner, attr)
            g = getattr(owner, "d" + attr)
            flat = w.reshape(-1)
            gflat = g.reshape(-1)
            idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
            for i in idx:
                h = 1e-6
                orig = flat[i]
                flat[i] = orig + h
                up = loss()
                flat[i] = orig - h
                dn = loss()
                flat[i] = orig
                fd = (up - dn) / (2 * h)
                denom = max(abs(fd), abs(gflat[i]), 1e-4)
                assert abs(fd - gflat[i]) / denom < 1e-4, f"{name}[{i}]: fd={fd} an={gflat[i]}"
                checked += 1
        assert checked >= 30


class StubModel:
    """Duck-typed detector producing scripted detections."""

    def __init__(self, classes, outputs):
        self.classes = tuple(classes)
        self.outputs = outputs

    @property
    def background_index(self):
        return len(self.classes)

    def detect(self, images):
        return self.outputs[: len(images)]


def det_for(class_index, box, conf, n_classes=2):
    probs = np.full(n_classes + 1, (1 - conf) / n_classes)
    probs[class_index] = conf
    return Detection(probabilities=probs, box=box, class_index=class_index, confidence=conf)


def manifest_for(records):
    return DatasetManifest(records=records, version_label="v0")


def sample_record(i, class_id, bbox):
    return SampleRecord(
        path=f"s{i}.png",
        class_id=class_id,
        orientation=float(i),
        provenance="real",
        version_label="v0",
        bbox=bbox,
    )


class TestEvaluate:
    def test_perfect_predictions(self):
        records = [sample_record(i, ["a", "b"][i % 2], (10, 10, 40, 30)) for i in range(6)]
        outputs = [det_for(i % 2, (10, 10, 40, 30), 0.9) for i in range(6)]
        model = StubModel(("a", "b"), outputs)
        result = evaluate(model, manifest_for(records), images=np.zeros((6, 1, 1)))
        assert result.map50 == 1.0
        assert np.trace(result.confusion) == 6
        assert result.confusion.sum() == 6

    def test_low_iou_counts_as_miss(self):
        records = [sample_record(0, "a", (0, 0, 10, 10))]
        outputs = [det_for(0, (5, 0, 10, 10), 0.9)]  # IoU = 1/3
        model = StubModel(("a", "b"), outputs)
        result = evaluate(model, manifest_for(records), images=np.zeros((1, 1, 1)))
        assert result.confusion[0, 2] == 1  # (a, background)
        assert result.map50 == 0.0

    def test_cross_class_confusion_recorded(self):
        records = [sample_record(0, "a", (10, 10, 40, 30))]
        outputs = [det_for(1, (10, 10, 40, 30), 0.8)]
        model = StubModel(("a", "b"), outputs)
        result = evaluate(model, manifest_for(records), images=np.zeros((1, 1, 1)))
        assert result.confusion[0, 1] == 1

    def test_background_false_alarm(self):
        records = [sample_record(0, BACKGROUND, None)]
        outputs = [det_for(1, (10, 10, 40, 30), 0.8)]
        model = StubModel(("a", "b"), outputs)
        result = evaluate(model, manifest_for(records), images=np.zeros((1, 1, 1)))
        assert result.confusion[2, 1] == 1

    def test_row_sums_equal_ground_truth_counts(self):
        rng = np.random.default_rng(3)
        records, outputs = [], []
        for i in range(40):
            gt = ["a", "b", BACKGROUND][rng.integers(3)]
            records.append(sample_record(i, gt, (10, 10, 40, 30) if gt != BACKGROUND else None))
            pred_cls = int(rng.integers(3))
            box = (10 + int(rng.integers(30)), 10, 40, 30)
            outputs.append(det_for(pred_cls, box, float(rng.uniform(0.4, 1.0))))
        model = StubModel(("a", "b"), outputs)
        result = evaluate(model, manifest_for(records), images=np.zeros((40, 1, 1)))
        for idx, cls in enumerate(result.class_order):
            expected = sum(1 for r in records if r.class_id == cls)
            assert result.confusion[idx].sum() == expected

    def test_order_invariance(self):
        rng = np.random.default_rng(4)
        records, outputs = [], []
        for i in range(30):
            gt = ["a", "b"][int(rng.integers(2))]
            records.append(sample_record(i, gt, (10, 10, 40, 30)))
            outputs.append(det_for(int(rng.integers(3)), (10, 10, 40, 30), float(rng.uniform(0.4, 1))))
        model = StubModel(("a", "b"), outputs)
        base = evaluate(model, manifest_for(records), images=np.zeros((30, 1, 1)))
        perm = rng.permutation(30)
        shuffled_records = [records[i] for i in perm]
        shuffled_outputs = [outputs[i] for i in perm]
        model2 = StubModel(("a", "b"), shuffled_outputs)
        shuffled = evaluate(model2, manifest_for(shuffled_records), images=np.zeros((30, 1, 1)))
        assert abs(base.map50 - shuffled.map50) < 1e-12
        np.testing.assert_array_equal(base.confusion, shuffled.confusion)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        X, labels, boxes, mask = separable_set(32)
        det = TinyVehicleDetector(classes=("left", "right"), epochs=1, seed=2)
        det.fit(X, (labels, boxes, mask))
        p = tmp_path / "model.ckpt"
        save_checkpoint(det, p)
        again = load_checkpoint(p)
        for (_, o1, a1), (_, o2, a2) in zip(det.net_.parameters(), again.net_.parameters()):
            np.testing.assert_array_equal(getattr(o1, a1), getattr(o2, a2))
        save_checkpoint(again, tmp_path / "model2.ckpt")
        assert (tmp_path / "model.ckpt").read_bytes() == (tmp_path / "model2.ckpt").read_bytes()

    def test_hash_mismatch_refused(self, tmp_path):
        X, labels, boxes, mask = separable_set(32)
        det = TinyVehicleDetector(classes=("left", "right"), epochs=1, seed=2)
        det.fit(X, (labels, boxes, mask))
        p = tmp_path / "model.ckpt"
        save_checkpoint(det, p)
        raw = p.read_bytes()
        tampered = raw.replace(b'"arch_hash": "', b'"arch_hash": "00', 1)
        q = tmp_path / "bad.ckpt"
        q.write_bytes(tampered)
        with pytest.raises(ValidationError, match="hash"):
            load_checkpoint(q)
