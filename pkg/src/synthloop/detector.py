"""Seeded single-object detector with mAP50 and confusion evaluation.

The estimator follows the scikit-learn protocol (``fit``/``predict``/
``get_params``) over image batches; convenience functions operate on dataset
manifests.  Each 128x256 sample holds at most one vehicle, so the model's
proposal is its highest-confidence class with the regressed box, and
"background" is an explicit class.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import BACKGROUND, DatasetManifest, load_images
from .errors import TrainingDivergedError, ValidationError
from .nnet import SGD, DetectorNet, cross_entropy, smooth_l1, softmax
from .validation import check_image_batch

SAMPLE_H, SAMPLE_W = 128, 256


def _encode_boxes(xywh: np.ndarray) -> np.ndarray:
    """Pixel (x, y, w, h) -> normalized (cx, cy, w, h) regression targets."""
    out = np.zeros_like(xywh, dtype=np.float64)
    out[:, 0] = (xywh[:, 0] + xywh[:, 2] / 2.0) / SAMPLE_W
    out[:, 1] = (xywh[:, 1] + xywh[:, 3] / 2.0) / SAMPLE_H
    out[:, 2] = xywh[:, 2] / SAMPLE_W
    out[:, 3] = xywh[:, 3] / SAMPLE_H
    return out


def _decode_box(cxcywh) -> tuple[float, float, float, float]:
    cx, cy, w, h = (float(v) for v in cxcywh)
    return (cx * SAMPLE_W - w * SAMPLE_W / 2.0, cy * SAMPLE_H - h * SAMPLE_H / 2.0, w * SAMPLE_W, h * SAMPLE_H)


def iou(box_a, box_b) -> float:
    """Intersection over union of (x, y, w, h) boxes; degenerate boxes give 0."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        return 0.0
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return float(inter / union) if union > 0 else 0.0


@dataclass
class Detection:
    probabilities: np.ndarray  # over classes + background, sums to 1
    box: tuple[float, float, float, float]
    class_index: int
    confidence: float


@dataclass
class EpochLog:
    epoch: int
    class_loss: float
    box_loss: float


@dataclass
class DetectorConfig:
    epochs: int = 40
    lr: float = 0.02
    momentum: float = 0.9
    batch_size: int = 64
    box_weight: float = 1.0
    box_lr_scale: float = 0.25
    dtype: str = "float32"


class TinyVehicleDetector(BaseEstimator):
    """From-scratch CNN detector: class probabilities plus one box per image.

    ``classes`` lists the vehicle classes; background is appended internally
    as the final index.  Training is plain SGD with momentum over a seeded
    batch order, so two fits with identical inputs produce identical weights.
    """

    def __init__(
        self,
        classes=("boxtruck", "flatcarrier", "turrettank", "wedgecar"),
        epochs=40,
        lr=0.02,
        momentum=0.9,
        batch_size=64,
        box_weight=1.0,
        box_lr_scale=0.25,
        seed=0,
        dtype="float32",
    ):
        self.classes = tuple(classes)
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.box_weight = box_weight
        self.box_lr_scale = box_lr_scale
        self.seed = seed
        self.dtype = dtype

    @property
    def background_index(self) -> int:
        return len(self.classes)

    INPUT_MEAN = 0.25  # display-space mean of benchmark frames
    INPUT_SCALE = 4.0

    def _prepare(self, X) -> np.ndarray:
        X = check_image_batch(X, (SAMPLE_H, SAMPLE_W))
        x = X.astype(self.dtype) / 255.0
        return ((x - self.INPUT_MEAN) * self.INPUT_SCALE)[..., None]

    def _pooled(self, net, X, chunk: int = 512) -> np.ndarray:
        """Stem output for a uint8 batch, converted chunkwise to save memory."""
        X = check_image_batch(X, (SAMPLE_H, SAMPLE_W))
        parts = [net.stem(self._prepare(X[i : i + chunk])) for i in range(0, len(X), chunk)]
        return np.concatenate(parts) if parts else np.zeros((0,), dtype=self.dtype)

    def _ensure_net(self):
        if not hasattr(self, "net_"):
            self.net_ = DetectorNet(len(self.classes), seed=self.seed, dtype=self.dtype)
        return self.net_

    def fit(self, X, y):
        """Train on images X (n,128,256) and targets y = (labels, boxes, mask).

        ``labels`` are class indices with background = len(classes); ``boxes``
        are pixel (x, y, w, h); ``mask`` marks rows with a real box.
        """
        labels, boxes, mask = y
        labels = np.asarray(labels, dtype=np.int64)
        if len(X) == 0:
            raise ValidationError("cannot fit on an empty dataset")
        if labels.min() < 0 or labels.max() > self.background_index:
            raise ValidationError("label index out of range", field="labels")
        boxes_n = _encode_boxes(np.asarray(boxes, dtype=np.float64)).astype(self.dtype)
        mask = np.asarray(mask, dtype=bool)

        net = DetectorNet(len(self.classes), seed=self.seed, dtype=self.dtype)
        opt = SGD(net, lr=self.lr, momentum=self.momentum, lr_multipliers={"box.": self.box_lr_scale})
        rng = np.random.default_rng((self.seed, 0xB41C))
        pooled = self._pooled(net, X)
        n = len(pooled)
        self.log_: list[EpochLog] = []
        decay_at = int(self.epochs * 0.75)
        for epoch in range(self.epochs):
            opt.lr = self.lr * (0.1 if epoch >= decay_at else 1.0)
            perm = rng.permutation(n)
            closs_sum = bloss_sum = 0.0
            batches = 0
            for start in range(0, n, self.batch_size):
                idx = perm[start : start + self.batch_size]
                closs, bloss = net.loss_and_grads(
                    pooled[idx], labels[idx], boxes_n[idx], mask[idx], box_weight=self.box_weight
                )
                if not (np.isfinite(closs) and np.isfinite(bloss)):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", epoch=epoch)
                opt.step()
                closs_sum += closs
                bloss_sum += bloss
                batches += 1
            self.log_.append(EpochLog(epoch, closs_sum / batches, bloss_sum / batches))
        self.net_ = net
        return self

    def predict_proba(self, X) -> np.ndarray:
        net = self._ensure_net()
        logits, _ = net.forward_body(self._pooled(net, X))
        return softmax(logits)

    def confidence_scores(self, X) -> np.ndarray:
        """Independent per-class confidences, sigmoid of each logit.

        Unlike the softmax probabilities these do not renormalize across
        classes, so masking a feature shared by two classes shows up in both
        classes' attributions instead of cancelling; this is the surface the
        saliency pipeline explains.
        """
        net = self._ensure_net()
        logits, _ = net.forward_body(self._pooled(net, X))
        return 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=np.float64)))

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def detect(self, X) -> list[Detection]:
        net = self._ensure_net()
        logits, boxes = net.forward_body(self._pooled(net, X))
        probs = softmax(logits)
        out = []
        for p, b in zip(probs, boxes):
            k = int(p.argmax())
            out.append(
                Detection(
                    probabilities=np.asarray(p, dtype=np.float64),
                    box=_decode_box(np.asarray(b, dtype=np.float64)),
                    class_index=k,
                    confidence=float(p[k]),
                )
            )
        return out

    def detect_one(self, image) -> Detection:
        return self.detect(np.asarray(image)[None])[0]


def targets_from_manifest(manifest: DatasetManifest, classes, root=None):
    images = load_images(manifest, root)
    bg = len(classes)
    index = {c: i for i, c in enumerate(classes)}
    labels = np.empty(len(manifest.records), dtype=np.int64)
    boxes = np.zeros((len(manifest.records), 4), dtype=np.float64)
    mask = np.zeros(len(manifest.records), dtype=bool)
    for i, r in enumerate(manifest.records):
        if r.class_id == BACKGROUND or r.bbox is None:
            labels[i] = bg
        else:
            if r.class_id not in index:
                raise ValidationError(f"class {r.class_id!r} not in detector class list")
            labels[i] = index[r.class_id]
            boxes[i] = r.bbox
            mask[i] = True
    return images, labels, boxes, mask


def train_detector(
    manifest: DatasetManifest,
    config: DetectorConfig,
    seed: int,
    classes,
    root=None,
) -> tuple[TinyVehicleDetector, list[EpochLog]]:
    """Train one detector on a manifest; deterministic per (manifest, config, seed)."""
    if not manifest.records:
        raise ValidationError("manifest is empty")
    present = {r.class_id for r in manifest.records if r.class_id != BACKGROUND}
    if len(present) < 2:
        raise ValidationError(f"training manifest must contain >= 2 vehicle classes, found {sorted(present)}")
    det = TinyVehicleDetector(
        classes=tuple(classes),
        epochs=config.epochs,
        lr=config.lr,
        momentum=config.momentum,
        batch_size=config.batch_size,
        box_weight=config.box_weight,
        box_lr_scale=config.box_lr_scale,
        seed=seed,
        dtype=config.dtype,
    )
    images, labels, boxes, mask = targets_from_manifest(manifest, det.classes, root)
    det.fit(images, (labels, boxes, mask))
    return det, det.log_


@dataclass
class PredictionRecord:
    path: str
    gt_class: str
    pred_class: str
    orientation: float
    confidence: float
    iou: float
    range_m: float = 0.0
    matched: bool = False  # classified as gt with IoU above threshold


@dataclass
class EvaluationResult:
    map50: float
    ap_per_class: dict[str, float]
    confusion: np.ndarray  # (C+1, C+1) ints, rows = truth, last index = background
    class_order: list[str]  # vehicle classes then "background"
    records: list[PredictionRecord] = field(default_factory=list)


def average_precision(detections: list[tuple[float, bool, str]], n_gt: int) -> float:
    """All-point interpolated AP from (confidence, is_tp, tiebreak) detections."""
    if n_gt == 0:
        return 0.0
    ordered = sorted(detections, key=lambda d: (-d[0], d[2]))
    tp = np.cumsum([1.0 if d[1] else 0.0 for d in ordered])
    fp = np.cumsum([0.0 if d[1] else 1.0 for d in ordered])
    if len(ordered) == 0:
        return 0.0
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    # Precision envelope, then area under the step curve.
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def evaluate(
    model: TinyVehicleDetector,
    manifest: DatasetManifest,
    iou_threshold: float = 0.5,
    root=None,
    images: np.ndarray | None = None,
) -> EvaluationResult:
    """mAP50 plus a background-aware confusion matrix over a test manifest.

    Per sample with a ground-truth vehicle: a background prediction or a box
    under the IoU threshold counts as a miss (row class, column background);
    an adequate box counts under the predicted class, diagonal or not.  For
    background samples, any vehicle prediction is a false alarm.
    """
    if not manifest.records:
        raise ValidationError("test manifest is empty")
    if images is None:
        images = load_images(manifest, root)
    classes = list(model.classes)
    order = classes + [BACKGROUND]
    cix = {c: i for i, c in enumerate(order)}
    bg = model.background_index
    confusion = np.zeros((len(order), len(order)), dtype=np.int64)
    detections: dict[str, list[tuple[float, bool, str]]] = {c: [] for c in classes}
    n_gt = {c: 0 for c in classes}
    records = []

    dets = model.detect(images)
    for r, det in zip(manifest.records, dets):
        pred_is_bg = det.class_index == bg
        pred_class = BACKGROUND if pred_is_bg else classes[det.class_index]
        if r.class_id != BACKGROUND and r.bbox is not None:
            n_gt[r.class_id] += 1
            overlap = 0.0 if pred_is_bg else iou(det.box, r.bbox)
            matched = not pred_is_bg and overlap >= iou_threshold
            col = cix[pred_class] if matched else cix[BACKGROUND]
            confusion[cix[r.class_id], col] += 1
            if not pred_is_bg:
                is_tp = matched and pred_class == r.class_id
                detections[pred_class].append((det.confidence, is_tp, r.path))
            records.append(
                PredictionRecord(
                    path=r.path,
                    gt_class=r.class_id,
                    pred_class=pred_class if matched else BACKGROUND,
                    orientation=r.orientation,
                    confidence=det.confidence,
                    iou=overlap,
                    range_m=r.range_m,
                    matched=matched and pred_class == r.class_id,
                )
            )
        else:
            confusion[cix[BACKGROUND], cix[pred_class]] += 1
            if not pred_is_bg:
                detections[pred_class].append((det.confidence, False, r.path))
            records.append(
                PredictionRecord(
                    path=r.path,
                    gt_class=BACKGROUND,
                    pred_class=pred_class,
                    orientation=r.orientation,
                    confidence=det.confidence,
                    iou=0.0,
                    range_m=r.range_m,
                )
            )
    ap = {c: average_precision(detections[c], n_gt[c]) for c in classes if n_gt[c] > 0}
    map50 = float(np.mean(list(ap.values()))) if ap else 0.0
    return EvaluationResult(map50=map50, ap_per_class=ap, confusion=confusion, class_order=order, records=records)


ARCH_MAGIC = b"SYNTHDET1\n"


def architecture_hash(net: DetectorNet) -> str:
    payload = json.dumps(net.descriptor(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def save_checkpoint(model: TinyVehicleDetector, path) -> None:
    """Self-describing binary: magic, JSON header, raw parameter bytes."""
    net = model._ensure_net()
    params = [(name, getattr(owner, attr)) for name, owner, attr in net.parameters()]
    header = {
        "arch_hash": architecture_hash(net),
        "seed": model.seed,
        "dtype": str(net.dtype),
        "classes": list(model.classes),
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params],
        "hyper": {
            "epochs": model.epochs,
            "lr": model.lr,
            "momentum": model.momentum,
            "batch_size": model.batch_size,
            "box_weight": model.box_weight,
            "box_lr_scale": model.box_lr_scale,
        },
    }
    blob = b"".join(np.ascontiguousarray(p).tobytes() for _, p in params)
    with open(path, "wb") as fh:
        fh.write(ARCH_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(blob)


def load_checkpoint(path) -> TinyVehicleDetector:
    with open(path, "rb") as fh:
        magic = fh.read(len(ARCH_MAGIC))
        if magic != ARCH_MAGIC:
            raise ValidationError(f"not a detector checkpoint: {path}")
        header = json.loads(fh.readline().decode())
        blob = fh.read()
    model = TinyVehicleDetector(
        classes=tuple(header["classes"]), seed=header["seed"], dtype=header["dtype"], **header["hyper"]
    )
    net = DetectorNet(len(model.classes), seed=model.seed, dtype=model.dtype)
    if architecture_hash(net) != header["arch_hash"]:
        raise ValidationError(
            f"checkpoint architecture hash {header['arch_hash']} does not match current architecture"
        )
    offset = 0
    dtype = np.dtype(header["dtype"])
    for (name, owner, attr), meta in zip(net.parameters(), header["params"]):
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
        setattr(owner, attr, arr)
        offset += arr.nbytes
    model.net_ = net
    return model
