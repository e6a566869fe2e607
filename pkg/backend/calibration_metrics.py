"""
Aberro Calibration Metrics
Variation-ratio confidence, reliability bins, ECE / mECE, AUREC, mIoU and
class-balancing weights for segmentation outputs.
"""
import logging
from typing import Dict, Iterable, List, Tuple

import numpy as np
from scipy.special import softmax

from errors import InvalidArgumentError, UndefinedMetricError
from models import LogitTensor, LabelMap, ReliabilityBins

logger = logging.getLogger(__name__)

DEFAULT_BINS = 10


def _logit_array(logits) -> np.ndarray:
    return logits.data if isinstance(logits, LogitTensor) else np.asarray(logits, dtype=float)


def _check_temperature(t: float):
    if not t > 0:
        raise InvalidArgumentError(f"Temperature must be positive, got {t}")


# ========================================
# Confidence
# ========================================

def class_probabilities(logits, t: float = 1.0) -> np.ndarray:
    _check_temperature(t)
    return softmax(_logit_array(logits) / t, axis=-1)


def confidence_map(logits, t: float = 1.0) -> np.ndarray:
    """Per-pixel maximum softmax probability at temperature t"""
    return class_probabilities(logits, t).max(axis=-1)


def variation_ratio(logits, t: float = 1.0) -> np.ndarray:
    return 1.0 - confidence_map(logits, t)


def predictions(logits) -> np.ndarray:
    """argmax class per pixel (temperature independent)"""
    return np.argmax(_logit_array(logits), axis=-1)


# ========================================
# Binning
# ========================================

def bin_index(conf: np.ndarray, n_bins: int) -> np.ndarray:
    """Right-closed bins ((m-1)/Nb, m/Nb]; conf == 0 falls into the first bin"""
    return np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)


def reliability_bins(conf, correct, n_bins: int = DEFAULT_BINS) -> ReliabilityBins:
    conf = np.asarray(conf, dtype=float).ravel()
    correct = np.asarray(correct, dtype=bool).ravel()
    if conf.size != correct.size:
        raise InvalidArgumentError(f"{conf.size} confidences but {correct.size} correctness flags")
    if n_bins < 1:
        raise InvalidArgumentError("n_bins must be >= 1")
    if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
        raise InvalidArgumentError("Confidences must lie in [0, 1]")
    idx = bin_index(conf, n_bins)
    return ReliabilityBins(
        n_bins=n_bins,
        counts=np.bincount(idx, minlength=n_bins).astype(np.int64),
        confidence_sums=np.bincount(idx, weights=conf, minlength=n_bins),
        accuracy_sums=np.bincount(idx, weights=correct.astype(float), minlength=n_bins)
    )


def merge_bins(parts: Iterable[ReliabilityBins]) -> ReliabilityBins:
    merged = None
    for part in parts:
        merged = part if merged is None else merged.merge(part)
    if merged is None:
        raise InvalidArgumentError("Nothing to merge")
    return merged


def reliability_diagram(bins: ReliabilityBins) -> List[dict]:
    """Plot-ready rows of a reliability diagram"""
    rows = bins.to_dict()['bins']
    for row in rows:
        row['gap'] = abs(row['mean_accuracy'] - row['mean_confidence']) if row['count'] else None
    return rows


# ========================================
# ECE / AUREC
# ========================================

def ece(bins: ReliabilityBins) -> float:
    """sum_m |B_m|/n * |acc(B_m) - conf(B_m)|"""
    total = bins.total_count
    if total == 0:
        raise UndefinedMetricError("ECE of an empty population")
    return float(np.sum(np.abs(bins.accuracy_sums - bins.confidence_sums)) / total)


def aurec(bins: ReliabilityBins) -> float:
    """Unweighted mean gap over the non-empty bins"""
    filled = bins.counts > 0
    if not filled.any():
        raise UndefinedMetricError("AUREC with all bins empty")
    gaps = np.abs(bins.mean_accuracy - bins.mean_confidence)[filled]
    return float(gaps.mean())


def class_bins(logits, labels: LabelMap, t: float = 1.0, n_bins: int = DEFAULT_BINS) -> Dict[int, ReliabilityBins]:
    """Reliability bins per ground-truth class (pixels whose label is that class)"""
    data = _logit_array(logits)
    if data.shape[:2] != labels.data.shape:
        raise InvalidArgumentError(f"Logits {data.shape[:2]} and labels {labels.data.shape} differ in shape")
    probs = class_probabilities(data, t)
    conf = probs.max(axis=-1)
    correct = probs.argmax(axis=-1) == labels.data
    valid = labels.valid_mask()
    gt = labels.data[valid]
    conf, correct = conf[valid], correct[valid]
    if gt.size and (gt.min() < 0 or gt.max() >= data.shape[-1]):
        raise InvalidArgumentError(f"Label IDs outside [0, {data.shape[-1]})")
    return {
        int(cls): reliability_bins(conf[gt == cls], correct[gt == cls], n_bins)
        for cls in np.unique(gt)
    }


def mece_from_bins(per_class: Dict[int, ReliabilityBins]) -> float:
    if not per_class:
        raise UndefinedMetricError("mECE without any labelled pixel")
    return float(np.mean([ece(b) for b in per_class.values()]))


def mece(logits, labels: LabelMap, t: float = 1.0, n_bins: int = DEFAULT_BINS) -> float:
    """Mean of per-class ECE over the classes present in the ground truth"""
    return mece_from_bins(class_bins(logits, labels, t, n_bins))


def pooled_mece(instances: Iterable[Tuple[object, LabelMap, float]], n_bins: int = DEFAULT_BINS) -> float:
    """Dataset-level mECE: per-class bins are merged across instances before the ECE"""
    pooled: Dict[int, ReliabilityBins] = {}
    for logits, labels, t in instances:
        for cls, b in class_bins(logits, labels, t, n_bins).items():
            pooled[cls] = pooled[cls].merge(b) if cls in pooled else b
    return mece_from_bins(pooled)


# ========================================
# Segmentation quality
# ========================================

def miou(pred: LabelMap, gt: LabelMap, n_classes: int):
    """
    Per-class IoU TP/(TP+FP+FN) (NaN where the union is empty) and its mean over
    the classes present in the ground truth. Ignored pixels are excluded.
    """
    if pred.data.shape != gt.data.shape:
        raise InvalidArgumentError(f"Prediction {pred.data.shape} and ground truth {gt.data.shape} differ in shape")
    valid = gt.valid_mask() & pred.valid_mask()
    p = pred.data[valid]
    g = gt.data[valid]
    if p.size and (min(p.min(), g.min()) < 0 or max(p.max(), g.max()) >= n_classes):
        raise InvalidArgumentError(f"Class IDs outside [0, {n_classes})")
    confusion = np.bincount(g * n_classes + p, minlength=n_classes ** 2).reshape(n_classes, n_classes)
    tp = np.diag(confusion).astype(float)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    iou = np.divide(tp, union, out=np.full(n_classes, np.nan), where=union > 0)
    present = confusion.sum(axis=1) > 0
    if not present.any():
        raise UndefinedMetricError("mIoU without any labelled pixel")
    return float(iou[present].mean()), iou.tolist()


def class_balance_weights(counts, n_total: int) -> np.ndarray:
    """tau_i proportional to 1 / log(1.1 + c_i / N), normalized to sum 1"""
    counts = np.asarray(counts, dtype=float)
    if not n_total > 0:
        raise InvalidArgumentError(f"Total pixel count must be positive, got {n_total}")
    if np.any(counts < 0) or counts.sum() > n_total:
        raise InvalidArgumentError("Class counts must be non-negative and sum to at most N")
    inv = 1.0 / np.log(1.1 + counts / n_total)
    return inv / inv.sum()
