"""Segmentation evaluation: oracle testing, confusion-matrix metrics,
deep-ensemble softmax averaging and calibration (ECE/MCE/KL)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_IGNORE_LABEL = 255
KL_EPS = 1e-12
PROB_SUM_TOL = 1e-4


@dataclass
class PredictionSet:
    """Per-image class-label maps with optional confidence and probabilities.

    labels: list of (H, W) uint16 maps.
    confidence: optional list of (H, W) float32 maps in [0, 1].
    probs: optional list of (C, H, W) float32 softmax maps.
    """

    labels: list[np.ndarray]
    confidence: list[np.ndarray] | None = None
    probs: list[np.ndarray] | None = None

    def __post_init__(self):
        self.labels = [np.ascontiguousarray(m, dtype=np.uint16) for m in self.labels]
        if self.confidence is not None:
            self.confidence = [np.ascontiguousarray(m, dtype=np.float32) for m in self.confidence]
        if self.probs is not None:
            self.probs = [np.ascontiguousarray(m, dtype=np.float32) for m in self.probs]

    def __len__(self) -> int:
        return len(self.labels)

    def validate(self) -> None:
        """Check the cross-field invariants; raises ValueError on violation."""
        for i, lab in enumerate(self.labels):
            if lab.ndim != 2:
                raise ValueError(f"image {i}: labels must be 2-D, got shape {lab.shape}")
            if self.confidence is not None:
                conf = self.confidence[i]
                if conf.shape != lab.shape:
                    raise ValueError(f"image {i}: confidence shape {conf.shape} != {lab.shape}")
                if np.any(conf < 0) or np.any(conf > 1):
                    raise ValueError(f"image {i}: confidence outside [0, 1]")
            if self.probs is not None:
                probs = self.probs[i]
                if probs.ndim != 3 or probs.shape[1:] != lab.shape:
                    raise ValueError(f"image {i}: probs shape {probs.shape} incompatible with {lab.shape}")
                if np.any(probs < 0):
                    raise ValueError(f"image {i}: negative probabilities")
                sums = probs.sum(axis=0)
                if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
                    raise ValueError(f"image {i}: probabilities do not sum to 1")
                if np.any(probs.argmax(axis=0).astype(np.uint16) != lab):
                    raise ValueError(f"image {i}: labels disagree with argmax of probs")
                if self.confidence is not None:
                    if not np.allclose(probs.max(axis=0), self.confidence[i], atol=1e-6):
                        raise ValueError(f"image {i}: confidence disagrees with max prob")


@dataclass
class ConfusionMatrix:
    """counts[g][p] = number of valid pixels with ground truth g predicted p."""

    counts: np.ndarray
    valid_pixels: int

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]


@dataclass
class ClassScores:
    """Per-class IoU plus macro metrics over the included classes.

    iou is NaN for excluded classes (no ground-truth and no predicted
    pixels); classes present in the ground truth but never predicted
    score 0 and stay in the means.
    """

    iou: np.ndarray
    precision_per_class: np.ndarray
    recall_per_class: np.ndarray
    included: np.ndarray
    miou: float
    precision: float
    recall: float
    pixel_accuracy: float


@dataclass
class CalibrationBin:
    count: int
    accuracy: float
    confidence: float


@dataclass
class CalibrationReport:
    bins: list[CalibrationBin]
    ece: float
    mce: float
    kl: float | None
    p_hist: np.ndarray = field(default_factory=lambda: np.empty(0))
    q_hist: np.ndarray = field(default_factory=lambda: np.empty(0))


def oracle_merge(
    preds: list[np.ndarray],
    gt: np.ndarray,
    ignore_label: int = DEFAULT_IGNORE_LABEL,
) -> np.ndarray:
    """Merge all true-positive pixels across predictions into one map.

    Starts from preds[0]; every pixel some model classifies correctly is
    overwritten with that (correct) value, so pixels wrong in every
    model keep preds[0]'s value. Pixels ignored in the ground truth pass
    through from preds[0].
    """
    if len(preds) == 0:
        raise ValueError("oracle_merge needs at least one prediction")
    gt = np.asarray(gt)
    valid = gt != ignore_label
    merged = np.asarray(preds[0]).copy()
    for pred in preds:
        pred = np.asarray(pred)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
        hit = valid & (pred == gt)
        merged[hit] = pred[hit]
    return merged


def confusion_matrix(
    preds: list[np.ndarray],
    gts: list[np.ndarray],
    num_classes: int,
    ignore_label: int = DEFAULT_IGNORE_LABEL,
) -> ConfusionMatrix:
    """Accumulate a CxC pixel-count matrix over all non-ignore pixels."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth maps")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for i, (pred, gt) in enumerate(zip(preds, gts)):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"image {i}: prediction shape {pred.shape} != {gt.shape}")
        valid = gt != ignore_label
        g = gt[valid].astype(np.int64)
        p = pred[valid].astype(np.int64)
        if g.size and (g.max() >= num_classes):
            raise ValueError(f"image {i}: ground-truth label {g.max()} >= num_classes {num_classes}")
        if p.size and (p.max() >= num_classes):
            raise ValueError(f"image {i}: predicted label {p.max()} >= num_classes {num_classes}")
        counts += np.bincount(
            g * num_classes + p, minlength=num_classes * num_classes
        ).reshape(num_classes, num_classes)
    return ConfusionMatrix(counts=counts, valid_pixels=int(counts.sum()))


def compute_metrics(cm: ConfusionMatrix) -> ClassScores:
    """IoU, precision and recall per class plus macro means.

    A class is excluded only when it never occurs in the ground truth
    and is never predicted. A class with ground-truth pixels but no
    correct predictions keeps IoU 0 and is counted in the mean.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    gt_count = counts.sum(axis=1)
    pred_count = counts.sum(axis=0)
    included = (gt_count > 0) | (pred_count > 0)
    if not included.any():
        raise ValueError("all classes are empty; no metrics to compute")

    union = gt_count + pred_count - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)
        prec = np.where(pred_count > 0, tp / np.where(pred_count > 0, pred_count, 1), 0.0)
        rec = np.where(gt_count > 0, tp / np.where(gt_count > 0, gt_count, 1), 0.0)
    iou = np.where(included, iou, np.nan)
    valid = cm.valid_pixels
    return ClassScores(
        iou=iou,
        precision_per_class=np.where(included, prec, np.nan),
        recall_per_class=np.where(included, rec, np.nan),
        included=included,
        miou=float(np.nanmean(iou[included])),
        precision=float(prec[included].mean()),
        recall=float(rec[included].mean()),
        pixel_accuracy=float(tp.sum() / valid) if valid else 0.0,
    )


def oracle_score(
    preds_per_model: list[list[np.ndarray]],
    gts: list[np.ndarray],
    num_classes: int,
    ignore_label: int = DEFAULT_IGNORE_LABEL,
) -> ClassScores:
    """Metrics of the oracle-merged predictions over a dataset.

    preds_per_model[k][i] is model k's label map for image i.
    """
    if len(preds_per_model) == 0:
        raise ValueError("oracle_score needs at least one model")
    n_images = len(gts)
    for k, preds in enumerate(preds_per_model):
        if len(preds) != n_images:
            raise ValueError(f"model {k} has {len(preds)} predictions for {n_images} images")
    merged = [
        oracle_merge([preds[i] for preds in preds_per_model], gts[i], ignore_label)
        for i in range(n_images)
    ]
    return compute_metrics(confusion_matrix(merged, gts, num_classes, ignore_label))


def deep_ensemble_average(prob_sets: list[PredictionSet]) -> PredictionSet:
    """Average softmax predictions across ensemble members.

    Labels become the argmax of the mean (ties break to the lowest class
    id) and confidence the max of the mean.
    """
    if len(prob_sets) == 0:
        raise ValueError("deep_ensemble_average needs at least one member")
    for k, ps in enumerate(prob_sets):
        if ps.probs is None:
            raise ValueError(f"member {k} is missing probability maps")
    n_images = len(prob_sets[0])
    labels, confidence, probs = [], [], []
    for i in range(n_images):
        shape = prob_sets[0].probs[i].shape
        acc = np.zeros(shape, dtype=np.float64)
        for k, ps in enumerate(prob_sets):
            p = ps.probs[i]
            if p.shape != shape:
                raise ValueError(f"member {k}, image {i}: probs shape {p.shape} != {shape}")
            acc += p.astype(np.float64)
        mean = (acc / len(prob_sets)).astype(np.float32)
        probs.append(mean)
        labels.append(mean.argmax(axis=0).astype(np.uint16))
        confidence.append(mean.max(axis=0))
    return PredictionSet(labels=labels, confidence=confidence, probs=probs)


def _bin_index(conf: np.ndarray, num_bins: int) -> np.ndarray:
    # Equal-width bins over [0, 1]; confidence exactly 1.0 joins the top bin.
    idx = np.floor(conf.astype(np.float64) * num_bins).astype(np.int64)
    return np.clip(idx, 0, num_bins - 1)


def calibration(
    predictions: PredictionSet,
    gts: list[np.ndarray],
    num_bins: int = 10,
    ignore_label: int = DEFAULT_IGNORE_LABEL,
    weighted_ece: bool = False,
) -> CalibrationReport:
    """Bin confidences and compute ECE, MCE and the correct-vs-incorrect KL.

    ECE uses the 1/B normalization (empty bins contribute 0); pass
    weighted_ece=True for the conventional |bin|/n weighting. The KL
    divergence compares the B-bin confidence histograms of correct (P)
    and incorrect (Q) pixels, in nats, with Q clamped at 1e-12; it is
    None when there are no incorrect pixels.
    """
    if num_bins < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins}")
    if predictions.confidence is None:
        raise ValueError("calibration requires per-pixel confidence")
    if len(predictions) != len(gts):
        raise ValueError(f"{len(predictions)} prediction maps for {len(gts)} ground-truth maps")

    conf_parts, correct_parts = [], []
    for i, gt in enumerate(gts):
        gt = np.asarray(gt)
        lab = predictions.labels[i]
        conf = predictions.confidence[i]
        if lab.shape != gt.shape:
            raise ValueError(f"image {i}: labels shape {lab.shape} != {gt.shape}")
        valid = gt != ignore_label
        conf_parts.append(conf[valid])
        correct_parts.append(lab[valid] == gt[valid])
    conf = np.concatenate(conf_parts) if conf_parts else np.empty(0, dtype=np.float32)
    correct = np.concatenate(correct_parts) if correct_parts else np.empty(0, dtype=bool)
    if conf.size == 0:
        raise ValueError("no valid pixels")

    idx = _bin_index(conf, num_bins)
    bin_count = np.bincount(idx, minlength=num_bins)
    bin_conf_sum = np.bincount(idx, weights=conf.astype(np.float64), minlength=num_bins)
    bin_tp = np.bincount(idx, weights=correct.astype(np.float64), minlength=num_bins)

    bins = []
    gaps = np.zeros(num_bins)
    for b in range(num_bins):
        n = int(bin_count[b])
        if n == 0:
            bins.append(CalibrationBin(count=0, accuracy=math.nan, confidence=math.nan))
            continue
        acc = bin_tp[b] / n
        avg_conf = bin_conf_sum[b] / n
        gaps[b] = abs(acc - avg_conf)
        bins.append(CalibrationBin(count=n, accuracy=float(acc), confidence=float(avg_conf)))

    nonempty = bin_count > 0
    if weighted_ece:
        ece = float((gaps * bin_count).sum() / conf.size)
    else:
        ece = float(gaps.sum() / num_bins)
    mce = float(gaps[nonempty].max())

    n_correct = int(correct.sum())
    n_incorrect = conf.size - n_correct
    p_hist = np.bincount(idx[correct], minlength=num_bins).astype(np.float64)
    q_hist = np.bincount(idx[~correct], minlength=num_bins).astype(np.float64)
    if n_correct > 0:
        p_hist /= n_correct
    if n_incorrect > 0:
        q_hist /= n_incorrect
        kl = float(histogram_kl(p_hist, q_hist))
    else:
        kl = None
    return CalibrationReport(bins=bins, ece=ece, mce=mce, kl=kl, p_hist=p_hist, q_hist=q_hist)


def histogram_kl(p: np.ndarray, q: np.ndarray, eps: float = KL_EPS) -> float:
    """KL(P || Q) in nats over histogram bins, with Q clamped at eps."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], eps))))
