"""
Aberro Calibrators
Temperature scaling (TS), parameterized temperature scaling (PTS) and its
physics-informed variant with a Zernike prior (PIPTS): fitting, training,
inference, the per-instance optimal-temperature oracle and deep-ensemble
significance evaluation.
"""
import logging
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize_scalar
from scipy.special import log_softmax
from scipy.stats import t as student_t

import temperature_net as net
from calibration_metrics import class_probabilities, mece
from config import worker_count
from errors import InvalidArgumentError, InsufficientDataError, TrainingError
from models import (
    CalibratorModel, EnsembleReport, GaussianFit, LabelMap, LogitTensor,
    SmoothLossConfig, TemperatureOptimum, TrainConfig, ZernikeVector
)
from smooth_loss import instance_loss

logger = logging.getLogger(__name__)

T_MIN = 0.05
T_MAX = 20.0
GRID_POINTS = 64
MIN_DEVIATION_INSTANCES = 10


def _logits(item) -> np.ndarray:
    return item.data if isinstance(item, LogitTensor) else np.asarray(item, dtype=float)


def _prior(alpha) -> np.ndarray:
    if alpha is None:
        return np.zeros(net.PRIOR_WIDTH)
    if isinstance(alpha, ZernikeVector):
        return alpha.prior_vector()
    return np.asarray(alpha, dtype=float).reshape(net.PRIOR_WIDTH)


def unpack(instances):
    """Accept SyntheticInstance objects or (logits, labels[, alpha]) tuples"""
    logits, labels, priors = [], [], []
    for item in instances:
        if hasattr(item, 'logits'):
            logits.append(_logits(item.logits))
            labels.append(item.labels)
            priors.append(_prior(item.alpha))
        else:
            logits.append(_logits(item[0]))
            labels.append(item[1])
            priors.append(_prior(item[2] if len(item) > 2 else None))
    return logits, labels, np.array(priors).reshape(len(logits), net.PRIOR_WIDTH)


# ========================================
# Temperature application / TS
# ========================================

def apply_temperature(logits, t: float) -> np.ndarray:
    """softmax(omega / t) per pixel; argmax is unchanged for every t > 0"""
    return class_probabilities(logits, t)


def mean_nll(logit_list: Sequence, label_list: Sequence[LabelMap], t: float) -> float:
    total, count = 0.0, 0
    for logits, labels in zip(logit_list, label_list):
        data = _logits(logits)
        valid = labels.valid_mask()
        log_p = log_softmax(data[valid] / t, axis=-1)
        y = labels.data[valid]
        total -= float(log_p[np.arange(y.size), y].sum())
        count += y.size
    if count == 0:
        raise InvalidArgumentError("Validation set has no labelled pixels")
    return total / count


def fit_ts(val_logits: Sequence, val_labels: Sequence[LabelMap]):
    """Scalar temperature minimizing the mean NLL; returns (t, nll)"""
    if not val_logits or len(val_logits) != len(val_labels):
        raise InvalidArgumentError("fit_ts needs a non-empty, aligned validation set")
    result = minimize_scalar(
        lambda u: mean_nll(val_logits, val_labels, float(np.exp(u))),
        bounds=(np.log(T_MIN), np.log(T_MAX)),
        method='bounded',
        options={'xatol': 1e-4}
    )
    t = float(np.exp(result.x))
    logger.info(f"TS fit: T = {t:.4f}, NLL = {result.fun:.5f}")
    return t, float(result.fun)


# ========================================
# Per-instance oracle
# ========================================

def optimal_instance_temperature(logits, labels: LabelMap, n_bins: int = 10) -> TemperatureOptimum:
    """argmin_t of the instance mECE: 64-point log grid (plus t = 1), then bounded refinement"""
    grid = np.unique(np.append(np.geomspace(T_MIN, T_MAX, GRID_POINTS), 1.0))
    scores = np.array([mece(logits, labels, float(t), n_bins) for t in grid])
    best = int(np.argmin(scores))
    t_best, score = float(grid[best]), float(scores[best])

    gt = labels.data[labels.valid_mask()]
    if np.unique(gt).size < 2:
        logger.warning("Single-class instance: returning the grid minimum without refinement")
        return TemperatureOptimum(t_best, score, degenerate=True)

    lo = np.log(grid[max(best - 1, 0)])
    hi = np.log(grid[min(best + 1, grid.size - 1)])
    if hi > lo:
        result = minimize_scalar(
            lambda u: mece(logits, labels, float(np.exp(u)), n_bins),
            bounds=(lo, hi), method='bounded', options={'xatol': 1e-4}
        )
        if result.fun < score:
            t_best, score = float(np.exp(result.x)), float(result.fun)
    return TemperatureOptimum(t_best, score)


# ========================================
# PTS / PIPTS inference
# ========================================

def pts_forward(model: CalibratorModel, logits) -> float:
    if model.variant != 'pts':
        raise InvalidArgumentError(f"pts_forward called with a {model.variant} model")
    return net.predict(model.params, _logits(logits), None, model.meta.get('input_size', 32))


def pipts_forward(model: CalibratorModel, logits, alpha) -> float:
    if model.variant != 'pipts':
        raise InvalidArgumentError(f"pipts_forward called with a {model.variant} model")
    return net.predict(model.params, _logits(logits), _prior(alpha), model.meta.get('input_size', 32))


def predict_temperature(model: CalibratorModel, logits, alpha=None) -> float:
    if model.variant == 'ts':
        return float(model.temperature)
    if model.variant == 'pts':
        return pts_forward(model, logits)
    return pipts_forward(model, logits, alpha)


def calibrate(model: CalibratorModel, logits, alpha=None) -> np.ndarray:
    return apply_temperature(logits, predict_temperature(model, logits, alpha))


def evaluate_mece(model: CalibratorModel, instances, n_bins: int = 10) -> float:
    """Mean instance mECE at the predicted temperatures"""
    logits, labels, priors = unpack(instances)
    scores = [
        mece(l, y, predict_temperature(model, l, a), n_bins)
        for l, y, a in zip(logits, labels, priors)
    ]
    return float(np.mean(scores))


# ========================================
# Training
# ========================================

class AdamOptimizer:
    """First/second-moment accumulating gradient descent"""

    def __init__(self, keys, cfg: TrainConfig):
        self.lr = cfg.learning_rate
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.epsilon = cfg.epsilon
        self.step_count = 0
        self.m = {}
        self.v = {}
        self.keys = list(keys)

    def step(self, params, grads):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for k in self.keys:
            g = grads[k]
            self.m[k] = self.beta1 * self.m.get(k, 0.0) + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v.get(k, 0.0) + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.epsilon)


def _batch_loss(params, x, priors, logits, labels, loss_cfg, with_grad=True):
    temps, cache = net.forward(params, x, priors)
    losses, d_losses = [], []
    for t, l, y in zip(temps, logits, labels):
        loss, d_loss, _ = instance_loss(l, y, float(t), loss_cfg)
        losses.append(loss)
        d_losses.append(d_loss)
    losses = np.array(losses)
    if not np.all(np.isfinite(losses)) or not np.all(np.isfinite(d_losses)):
        raise TrainingError("Non-finite loss", {'temperatures': temps.tolist(), 'losses': losses.tolist()})
    grads = net.backward(params, cache, np.array(d_losses) / len(losses)) if with_grad else None
    return float(losses.mean()), grads


def train_calibrator(variant: str, train_set, loss_cfg: SmoothLossConfig = None,
                     train_cfg: TrainConfig = None, seed: int = 0) -> CalibratorModel:
    """
    Fit a calibrator on (logits, labels, alpha) instances.
    'ts' minimizes the NLL; 'pts'/'pipts' minimize the mean smoothed mECE loss
    with Adam, a 10x step reduction after a validation plateau and early stopping.
    """
    loss_cfg = loss_cfg or SmoothLossConfig()
    train_cfg = train_cfg or TrainConfig()
    logits, labels, priors = unpack(train_set)
    if not logits:
        raise InvalidArgumentError("Training set is empty")
    config_meta = {'smooth_loss': loss_cfg.to_dict(), 'training': train_cfg.to_dict()}

    if variant == 'ts':
        t, nll = fit_ts(logits, labels)
        return CalibratorModel('ts', temperature=t, seed=seed, meta={'config': config_meta, 'nll': nll})

    rng = np.random.default_rng(seed)
    n = len(logits)
    order = rng.permutation(n)
    n_val = int(np.floor(train_cfg.validation_fraction * n)) if n >= 4 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]

    x = net.prepare_batch(logits, train_cfg.input_size)
    params = net.init_params(variant, x.shape[-1], train_cfg, rng)
    params[net.STATS_KEY] = net.input_statistics(x[train_idx])
    prior_input = priors if variant == 'pipts' else None
    keys = net.trainable(params)
    optimizer = AdamOptimizer(keys, train_cfg)

    def subset(idx):
        return (x[idx], None if prior_input is None else prior_input[idx],
                [logits[i] for i in idx], [labels[i] for i in idx])

    monitor_idx = val_idx if n_val else train_idx
    best_loss, best_params = np.inf, {k: v.copy() for k, v in params.items()}
    best_epoch, last_reduction, history = 0, 0, []

    for epoch in range(1, train_cfg.max_epochs + 1):
        shuffled = rng.permutation(train_idx)
        epoch_losses = []
        for start in range(0, shuffled.size, train_cfg.batch_size):
            batch = shuffled[start:start + train_cfg.batch_size]
            try:
                loss, grads = _batch_loss(params, *subset(batch), loss_cfg)
            except TrainingError as e:
                e.diagnostics.update({'epoch': epoch, 'variant': variant, 'seed': seed})
                raise
            optimizer.step(params, grads)
            epoch_losses.append(loss)

        monitor, _ = _batch_loss(params, *subset(monitor_idx), loss_cfg, with_grad=False)
        history.append(float(np.mean(epoch_losses)))
        logger.debug(f"[{variant} seed={seed}] epoch {epoch}: train {history[-1]:.6f}, val {monitor:.6f}, lr {optimizer.lr:.1e}")

        if monitor < best_loss:
            best_loss, best_epoch = monitor, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        stalled = epoch - max(best_epoch, last_reduction)
        if stalled >= train_cfg.plateau_epochs:
            optimizer.lr *= train_cfg.lr_factor
            last_reduction = epoch
            logger.debug(f"[{variant} seed={seed}] plateau, learning rate -> {optimizer.lr:.1e}")
        if epoch - best_epoch >= train_cfg.patience_epochs:
            logger.info(f"[{variant} seed={seed}] early stop at epoch {epoch} (best {best_epoch})")
            break

    logger.info(f"Trained {variant} (seed {seed}): best monitored loss {best_loss:.6f} at epoch {best_epoch}")
    return CalibratorModel(
        variant=variant,
        params=best_params,
        seed=seed,
        meta={
            'config': config_meta,
            'input_size': train_cfg.input_size,
            'best_epoch': best_epoch,
            'best_loss': float(best_loss),
            'loss_history': history
        }
    )


# ========================================
# Deep ensembles
# ========================================

def _train_member(variant, train_set, eval_set, loss_cfg, train_cfg, seed, n_bins):
    try:
        model = train_calibrator(variant, train_set, loss_cfg, train_cfg, seed)
    except TrainingError as e:
        return None, f"{e} {e.diagnostics}"
    return evaluate_mece(model, eval_set, n_bins), None


def k_factor(n_members: int, confidence: float = 0.95) -> float:
    """Two-sided Student-t extension factor with n - 1 dof, two decimals (2.23 for 11)"""
    return round(float(student_t.ppf(0.5 + confidence / 2.0, n_members - 1)), 2)


def ensemble_evaluate(variant: str, train_set, eval_set, n_members: int = 11,
                      seeds: Optional[Sequence[int]] = None, loss_cfg: SmoothLossConfig = None,
                      train_cfg: TrainConfig = None, baseline: Optional[EnsembleReport] = None,
                      n_bins: int = 10, n_jobs: int = None) -> EnsembleReport:
    """
    Train n_members calibrators that differ only in their initialization seed and
    compare the mean held-out mECE against `baseline` at the 95% Student-t level.
    """
    if n_members < 2:
        raise InvalidArgumentError("An ensemble needs at least two members")
    seeds = list(seeds) if seeds is not None else list(range(n_members))
    if len(seeds) != n_members:
        raise InvalidArgumentError(f"{len(seeds)} seeds for {n_members} members")

    results = Parallel(n_jobs=worker_count(n_jobs or n_members))(
        delayed(_train_member)(variant, train_set, eval_set, loss_cfg, train_cfg, s, n_bins)
        for s in seeds
    )
    scores, failed = [], []
    for idx, (score, error) in enumerate(results):
        if score is None:
            logger.warning(f"Ensemble member {idx} (seed {seeds[idx]}) excluded: {error}")
            failed.append(idx)
        else:
            scores.append(score)
    if len(scores) < 2:
        raise InsufficientDataError(f"Only {len(scores)} ensemble members trained successfully")

    values = np.array(scores)
    sem = float(values.std(ddof=1) / np.sqrt(values.size))
    report = EnsembleReport(
        variant=variant,
        member_mece=[float(v) for v in values],
        mean=float(values.mean()),
        std_of_mean=sem,
        k_factor=k_factor(values.size),
        failed_members=failed
    )
    if baseline is not None:
        report.baseline_mean = baseline.mean
        report.significant = compare_ensembles(report, baseline)
    logger.info(f"Ensemble {variant}: mECE {report.mean:.5f} +/- {report.std_of_mean:.5f} (k={report.k_factor})")
    return report


def compare_ensembles(a: EnsembleReport, b: EnsembleReport) -> bool:
    pooled = np.hypot(a.std_of_mean, b.std_of_mean)
    return bool(abs(a.mean - b.mean) > a.k_factor * pooled)


# ========================================
# Temperature deviation analysis
# ========================================

def gaussian_fit(deltas, hist_bins: int = 20) -> GaussianFit:
    """
    Gaussian maximum-likelihood fit; uncertainties are the inverse curvature of
    the negative log-likelihood at the optimum (sigma/sqrt(n), sigma/sqrt(2n)).
    """
    d = np.asarray(deltas, dtype=float)
    if d.size < MIN_DEVIATION_INSTANCES:
        raise InsufficientDataError(f"Need at least {MIN_DEVIATION_INSTANCES} instances, got {d.size}")
    mu = float(d.mean())
    sigma = float(np.sqrt(np.mean((d - mu) ** 2)))
    counts, edges = np.histogram(d, bins=hist_bins)
    return GaussianFit(
        deltas=d.tolist(),
        mu=mu,
        sigma=sigma,
        sigma_mu=sigma / np.sqrt(d.size),
        sigma_sigma=sigma / np.sqrt(2.0 * d.size),
        histogram={'counts': counts.tolist(), 'edges': edges.tolist()}
    )


def temperature_deviation_histogram(model: CalibratorModel, eval_set, optimal_temperatures=None,
                                    n_bins: int = 10, hist_bins: int = 20) -> GaussianFit:
    """Delta T = T_pred - T_opt per instance (T_opt from the mECE oracle unless given)"""
    logits, labels, priors = unpack(eval_set)
    if len(logits) < MIN_DEVIATION_INSTANCES:
        raise InsufficientDataError(f"Need at least {MIN_DEVIATION_INSTANCES} instances, got {len(logits)}")
    if optimal_temperatures is None:
        optimal_temperatures = [
            optimal_instance_temperature(l, y, n_bins).temperature for l, y in zip(logits, labels)
        ]
    deltas = [
        predict_temperature(model, l, a) - t_opt
        for l, a, t_opt in zip(logits, priors, optimal_temperatures)
    ]
    return gaussian_fit(deltas, hist_bins)
