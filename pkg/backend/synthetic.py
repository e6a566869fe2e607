"""
Aberro Synthetic Data
Scene / logit generator standing in for a trained segmentation network.

Generator law (closed form, reproduced exactly by any implementation):
    z      = a * e_y + eps,      eps ~ N(0, I_C)
    w_cal  = a * z               (softmax(w_cal) is the exact class posterior)
    w      = T* * w_cal          (observed logits; T* is the instance's optimal temperature)
    T*     = 1 + gain * (1 - S)     law 'strehl', S the simulated Strehl ratio
           = 1 + |alpha_4|          law 'defocus'
           = constant_temperature   law 'constant'
The per-pixel amplitude a = a0 / (1 + edge_gain * C * |degraded - clean|)
drops where the optics destroyed the image content.
"""
import logging
from typing import List

import numpy as np
from joblib import Parallel, delayed

from config import worker_count
from errors import InvalidArgumentError
from fourier_optics import compute_psf, degrade_image, resample_psf, optical_metrics
from models import (
    GeneratorConfig, LabelMap, LogitTensor, OpticalConfig, SyntheticInstance, ZernikeVector
)
from zernike import sample_zernike

logger = logging.getLogger(__name__)


# ========================================
# Laws
# ========================================

def optimal_temperature(alpha: ZernikeVector, cfg: GeneratorConfig, strehl_ratio: float = None) -> float:
    """
    Ground-truth temperature of an instance. Law 'strehl' uses the simulated
    Strehl ratio when given, else its Marechal estimate exp(-(2 pi rms)^2).
    """
    if cfg.temperature_law == 'strehl':
        if strehl_ratio is None:
            strehl_ratio = np.exp(-(2.0 * np.pi * alpha.rms) ** 2)
        return float(1.0 + cfg.temperature_gain * (1.0 - np.clip(strehl_ratio, 0.0, 1.0)))
    if cfg.temperature_law == 'defocus':
        return float(1.0 + abs(alpha.get(4)))
    return float(cfg.constant_temperature)


def calibrated_logits(rng: np.random.Generator, labels: np.ndarray, n_classes: int, amplitude) -> np.ndarray:
    """w_cal = a * (a * onehot(y) + eps); exactly calibrated for any amplitude map"""
    labels = np.asarray(labels)
    a = np.broadcast_to(np.asarray(amplitude, dtype=float), labels.shape)[..., None]
    onehot = np.eye(n_classes)[labels]
    noise = rng.standard_normal(labels.shape + (n_classes,))
    return a * (a * onehot + noise)


def calibrated_fixture(seed: int, shape=(128, 128), n_classes: int = 4, amplitude: float = 1.5,
                       t_star: float = 1.0):
    """i.i.d. uniform labels with logits scaled by t_star (optimal temperature t_star)"""
    if t_star <= 0:
        raise InvalidArgumentError("t_star must be positive")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=shape)
    logits = t_star * calibrated_logits(rng, labels, n_classes, amplitude)
    return LogitTensor(logits), LabelMap(labels)


# ========================================
# Scenes
# ========================================

def random_scene(rng: np.random.Generator, cfg: GeneratorConfig) -> np.ndarray:
    """Label map of rectangles and disks covering min_classes..max_classes distinct classes"""
    size = cfg.size
    k = int(rng.integers(cfg.min_classes, cfg.max_classes + 1))
    classes = rng.choice(cfg.n_classes, size=k, replace=False)
    labels = np.full((size, size), classes[0], dtype=np.int64)
    yy, xx = np.mgrid[0:size, 0:size]
    for cls in classes[1:]:
        for _ in range(int(rng.integers(1, 3))):
            if rng.random() < 0.5:
                y0, x0 = rng.integers(0, size - 8, size=2)
                h, w = rng.integers(8, size // 2, size=2)
                labels[y0:y0 + h, x0:x0 + w] = cls
            else:
                cy, cx = rng.integers(0, size, size=2)
                r = rng.integers(5, size // 4)
                labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = cls
    return labels


def render(labels: np.ndarray, n_classes: int, rng: np.random.Generator, noise: float) -> np.ndarray:
    levels = (np.arange(n_classes) + 0.5) / n_classes
    return np.clip(levels[labels] + noise * rng.standard_normal(labels.shape), 0.0, 1.0)


def make_instance(seed_seq: np.random.SeedSequence, optics: OpticalConfig, half_range: float,
                  cfg: GeneratorConfig, alpha: ZernikeVector = None) -> SyntheticInstance:
    rng = np.random.default_rng(seed_seq)
    if alpha is None:
        alpha = sample_zernike(int(seed_seq.generate_state(1)[0]), half_range)
    labels = random_scene(rng, cfg)
    clean = render(labels, cfg.n_classes, rng, cfg.image_noise)
    kernel = resample_psf(compute_psf(alpha, optics), optics.pixel_pitch)
    image = degrade_image(clean, kernel)

    a0 = rng.uniform(*cfg.amplitude_range)
    amplitude = a0 / (1.0 + cfg.edge_gain * cfg.n_classes * np.abs(image - clean))
    metrics = optical_metrics(alpha, optics)
    t_star = optimal_temperature(alpha, cfg, metrics.strehl)
    logits = t_star * calibrated_logits(rng, labels, cfg.n_classes, amplitude)
    return SyntheticInstance(
        image=image,
        labels=LabelMap(labels),
        logits=LogitTensor(logits),
        alpha=alpha,
        true_optimal_t=t_star,
        metrics=metrics
    )


def synth_dataset(seed: int, n_instances: int, optics: OpticalConfig = None, half_range: float = 1.0,
                  cfg: GeneratorConfig = None, n_jobs: int = None) -> List[SyntheticInstance]:
    """n instances with independent child seeds; identical output for identical seeds"""
    if n_instances < 1:
        raise InvalidArgumentError("n_instances must be >= 1")
    optics = optics or OpticalConfig()
    cfg = cfg or GeneratorConfig()
    children = np.random.SeedSequence(seed).spawn(n_instances)
    instances = Parallel(n_jobs=worker_count(n_jobs))(
        delayed(make_instance)(child, optics, half_range, cfg) for child in children
    )
    logger.info(f"Generated {n_instances} synthetic instances (seed {seed}, law {cfg.temperature_law})")
    return list(instances)
