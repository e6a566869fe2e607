"""
Aberro Smooth Loss
Differentiable calibration loss for temperature networks: soft-binned mECE with
its analytic temperature derivative, the modulation f / regularizer g pair, the
focal class-balanced NLL and the kernel-orthonormality penalty.
"""
import logging
from typing import Callable, Tuple

import numpy as np
from scipy.special import softmax

from errors import InvalidArgumentError, UndefinedMetricError
from models import LabelMap, SmoothLossConfig

logger = logging.getLogger(__name__)

LOG_EPS = 1e-12
FD_STEP = 1e-4


# ========================================
# Soft-binned mECE
# ========================================

def _smooth_abs(x, beta):
    """x * tanh(beta x) and its derivative"""
    th = np.tanh(beta * x)
    return x * th, th + beta * x * (1.0 - th * th)


def _flatten(logits, labels: LabelMap):
    data = logits.data if hasattr(logits, 'data') else np.asarray(logits, dtype=float)
    if data.shape[:2] != labels.data.shape:
        raise InvalidArgumentError(f"Logits {data.shape[:2]} and labels {labels.data.shape} differ in shape")
    valid = labels.valid_mask().ravel()
    omega = data.reshape(-1, data.shape[-1])[valid]
    y = labels.data.ravel()[valid]
    if y.size == 0:
        raise UndefinedMetricError("Soft ECE without any labelled pixel")
    return omega, y


def soft_ece(logits, labels: LabelMap, t: float, cfg: SmoothLossConfig = None) -> Tuple[float, float]:
    """
    Smooth surrogate of the instance mECE and its derivative with respect to t.

    Confidence is the soft maximum <p, softmax(beta p)>, accuracy the soft-argmax
    weight of the true class, bin membership a softmax over -beta * |conf - center|.
    Per bin the absolute gap is smoothed as g * tanh(beta g).
    """
    cfg = cfg or SmoothLossConfig()
    if not t > 0:
        raise InvalidArgumentError(f"Temperature must be positive, got {t}")
    beta = cfg.beta_s
    omega, y = _flatten(logits, labels)
    n_pix, n_cls = omega.shape

    q = omega / t
    dq = -q / t
    p = softmax(q, axis=1)
    dp = p * (dq - np.sum(p * dq, axis=1, keepdims=True))

    s = softmax(beta * p, axis=1)
    ds = beta * s * (dp - np.sum(s * dp, axis=1, keepdims=True))

    conf = np.sum(p * s, axis=1)
    dconf = np.sum(dp * s + p * ds, axis=1)
    rows = np.arange(n_pix)
    acc = s[rows, y]
    dacc = ds[rows, y]

    centers = (np.arange(cfg.n_bins) + 0.5) / cfg.n_bins
    offset = conf[:, None] - centers[None, :]
    w = softmax(-beta * np.abs(offset), axis=1)
    sgn = np.sign(offset)
    dw = -beta * dconf[:, None] * w * (sgn - np.sum(w * sgn, axis=1, keepdims=True))

    onehot = np.zeros((n_pix, n_cls))
    onehot[rows, y] = 1.0
    present = onehot.sum(axis=0) > 0
    onehot = onehot[:, present]
    n_k = onehot.sum(axis=0)[:, None]

    big_a = onehot.T @ (w * acc[:, None])
    big_c = onehot.T @ (w * conf[:, None])
    big_w = onehot.T @ w
    d_a = onehot.T @ (dw * acc[:, None] + w * dacc[:, None])
    d_c = onehot.T @ (dw * conf[:, None] + w * dconf[:, None])
    d_w = onehot.T @ dw

    denom = big_w + 1e-12
    gap = (big_a - big_c) / denom
    d_gap = (d_a - d_c) / denom - (big_a - big_c) * d_w / denom ** 2
    h, dh = _smooth_abs(gap, beta)

    per_class = np.sum(big_w * h, axis=1) / n_k[:, 0]
    d_per_class = np.sum(d_w * h + big_w * dh * d_gap, axis=1) / n_k[:, 0]
    return float(per_class.mean()), float(d_per_class.mean())


def soft_aurec(logits, labels: LabelMap, t: float, cfg: SmoothLossConfig = None) -> float:
    """AUREC smoothed the same way; bin occupancy is tanh(soft count)"""
    cfg = cfg or SmoothLossConfig()
    if not t > 0:
        raise InvalidArgumentError(f"Temperature must be positive, got {t}")
    beta = cfg.beta_s
    omega, y = _flatten(logits, labels)
    p = softmax(omega / t, axis=1)
    s = softmax(beta * p, axis=1)
    conf = np.sum(p * s, axis=1)
    acc = s[np.arange(y.size), y]
    centers = (np.arange(cfg.n_bins) + 0.5) / cfg.n_bins
    w = softmax(-beta * np.abs(conf[:, None] - centers[None, :]), axis=1)

    values = []
    for cls in np.unique(y):
        sel = y == cls
        big_w = w[sel].sum(axis=0)
        gap = (w[sel].T @ acc[sel] - w[sel].T @ conf[sel]) / (big_w + 1e-12)
        occupancy = np.tanh(big_w)
        values.append(np.sum(occupancy * _smooth_abs(gap, beta)[0]) / occupancy.sum())
    return float(np.mean(values))


def finite_difference(fn: Callable[[float], float], t: float, h: float = FD_STEP) -> float:
    """Central difference (fn(t+h) - fn(t-h)) / 2h"""
    return (fn(t + h) - fn(t - h)) / (2.0 * h)


# ========================================
# Loss assembly
# ========================================

def modulation_f(x, eta: float = 50.0):
    return x - np.tanh(eta * x) / eta


def modulation_f_prime(x, eta: float = 50.0):
    return np.tanh(eta * x) ** 2


def regularizer_g(t, kappa: float = 8.0):
    """Penalty near the temperature pole at t = 0"""
    return -(np.tanh(kappa * t) - 1.0) / kappa


def regularizer_g_prime(t, kappa: float = 8.0):
    return np.tanh(kappa * t) ** 2 - 1.0


def pipts_loss(ece_val: float, t: float, cfg: SmoothLossConfig = None) -> float:
    cfg = cfg or SmoothLossConfig()
    return float(modulation_f(ece_val, cfg.eta) + regularizer_g(t, cfg.kappa))


def pipts_loss_grad(d_ece_d_t: float, ece_val: float, t: float, d_t_d_theta,
                    cfg: SmoothLossConfig = None) -> np.ndarray:
    """dL/dtheta = (f'(ece) dECE/dT + g'(T)) dT/dtheta"""
    cfg = cfg or SmoothLossConfig()
    scale = modulation_f_prime(ece_val, cfg.eta) * d_ece_d_t + regularizer_g_prime(t, cfg.kappa)
    return scale * np.asarray(d_t_d_theta, dtype=float)


def instance_loss(logits, labels: LabelMap, t: float, cfg: SmoothLossConfig = None):
    """(loss, dloss/dT, soft ece) of one instance at temperature t"""
    cfg = cfg or SmoothLossConfig()
    value, d_value = soft_ece(logits, labels, t, cfg)
    loss = pipts_loss(value, t, cfg)
    d_loss = float(modulation_f_prime(value, cfg.eta) * d_value + regularizer_g_prime(t, cfg.kappa))
    return loss, d_loss, value


# ========================================
# Auxiliary loss terms
# ========================================

def focal_balanced_nll(probs, labels, tau, gamma: float = 2.0) -> float:
    """Mean over pixels of tau_y (1 - p_y)^gamma (-log p_y); p_y clamped at 1e-12"""
    if gamma < 0:
        raise InvalidArgumentError("gamma must be non-negative")
    probs = np.asarray(probs, dtype=float)
    flat = probs.reshape(-1, probs.shape[-1])
    if isinstance(labels, LabelMap):
        valid = labels.valid_mask().ravel()
        y = labels.data.ravel()
    else:
        y = np.asarray(labels).astype(np.int64).ravel()
        valid = np.ones(y.size, dtype=bool)
    flat, y = flat[valid], y[valid]
    if y.size == 0:
        raise UndefinedMetricError("NLL without any labelled pixel")
    tau = np.asarray(tau, dtype=float)
    p_y = flat[np.arange(y.size), y]
    clamped = np.maximum(p_y, LOG_EPS)
    return float(np.mean(tau[y] * (1.0 - p_y) ** gamma * -np.log(clamped)))


def kernel_orthonormality_penalty(kernel) -> float:
    """||K^T K - I||_F with K the kernel flattened to (fan_in, out_channels)"""
    k = np.asarray(kernel, dtype=float)
    k = k.reshape(-1, k.shape[-1])
    gram = k.T @ k
    return float(np.linalg.norm(gram - np.eye(gram.shape[0]), 'fro'))


def restoration_l1(restored, target) -> float:
    restored, target = np.asarray(restored, dtype=float), np.asarray(target, dtype=float)
    if restored.shape != target.shape:
        raise InvalidArgumentError("Restored and target images differ in shape")
    return float(np.mean(np.abs(restored - target)))


def zernike_l2(predicted, target) -> float:
    predicted, target = np.asarray(predicted, dtype=float), np.asarray(target, dtype=float)
    if predicted.shape != target.shape:
        raise InvalidArgumentError("Coefficient vectors differ in shape")
    return float(np.sum((predicted - target) ** 2))
