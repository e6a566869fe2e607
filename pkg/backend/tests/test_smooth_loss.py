import math

import numpy as np
import numpy.testing as npt
import pytest

from calibration_metrics import mece
from errors import InvalidArgumentError, UndefinedMetricError
from models import LabelMap, SmoothLossConfig
from smooth_loss import (
    finite_difference, focal_balanced_nll, instance_loss, kernel_orthonormality_penalty,
    modulation_f, modulation_f_prime, pipts_loss, pipts_loss_grad, regularizer_g,
    regularizer_g_prime, restoration_l1, soft_aurec, soft_ece, zernike_l2
)
from synthetic import calibrated_fixture


def edge_separated_fixture(seed, n_pixels=400):
    """Two-class pixels whose confidences sit at least 0.02 away from every bin edge"""
    rng = np.random.default_rng(seed)
    bins = rng.integers(5, 10, size=n_pixels)
    conf = (bins + 0.5) / 10 + rng.uniform(-0.03, 0.03, size=n_pixels)
    logits = np.stack([np.log(conf), np.log(1.0 - conf)], axis=-1).reshape(20, n_pixels // 20, 2)
    labels = (rng.uniform(size=n_pixels) > conf).astype(int).reshape(20, n_pixels // 20)
    return logits, LabelMap(labels)


# ========================================
# Soft ECE
# ========================================

def test_soft_ece_approaches_hard_ece():
    cfg = SmoothLossConfig(beta_s=1000.0)
    for seed in range(50):
        logits, labels = edge_separated_fixture(seed)
        soft, _ = soft_ece(logits, labels, 1.0, cfg)
        assert soft == pytest.approx(mece(logits, labels, 1.0, 10), abs=1e-3)


def test_soft_ece_small_on_calibrated_population(calibrated):
    logits, labels = calibrated
    soft, _ = soft_ece(logits, labels, 1.0)
    assert soft < 1e-2


@pytest.mark.parametrize("t", [0.6, 1.8, 2.5])
def test_temperature_derivative_matches_finite_difference(t):
    cfg = SmoothLossConfig(beta_s=50.0)
    logits, labels = calibrated_fixture(3, shape=(32, 32))
    _, analytic = soft_ece(logits, labels, t, cfg)
    numeric = finite_difference(lambda u: soft_ece(logits, labels, u, cfg)[0], t, h=1e-6)
    assert analytic == pytest.approx(numeric, rel=1e-4)


def test_instance_loss_derivative_matches_finite_difference():
    cfg = SmoothLossConfig(beta_s=50.0)
    logits, labels = calibrated_fixture(5, shape=(32, 32), t_star=0.6)
    for t in (0.4, 0.9, 1.6):
        _, d_loss, _ = instance_loss(logits, labels, t, cfg)
        numeric = finite_difference(lambda u: instance_loss(logits, labels, u, cfg)[0], t, h=1e-6)
        assert d_loss == pytest.approx(numeric, rel=1e-4)


def test_one_pixel_loss_is_continuously_differentiable():
    logits = np.array([[[2.0, 0.0, -1.0]]])
    labels = LabelMap(np.array([[0]]))
    grid = np.arange(0.8, 3.0, 1e-3)
    values, slopes = zip(*[instance_loss(logits, labels, float(t))[:2] for t in grid])
    assert np.max(np.abs(np.diff(slopes))) < 1e-3
    assert np.max(np.abs(np.diff(values))) < 1e-3 * max(np.max(np.abs(slopes)), 1.0) * 1.01


def test_soft_ece_validation():
    logits, labels = calibrated_fixture(0, shape=(8, 8))
    with pytest.raises(InvalidArgumentError):
        soft_ece(logits, labels, 0.0)
    with pytest.raises(UndefinedMetricError):
        soft_ece(logits, LabelMap(np.full((8, 8), 99), ignore_id=99), 1.0)


def test_soft_aurec_tracks_hard_gap():
    logits, labels = edge_separated_fixture(11)
    value = soft_aurec(logits, labels, 1.0)
    assert 0.0 <= value < 1.0
    assert soft_aurec(logits, labels, 3.0) != pytest.approx(value)


# ========================================
# Loss assembly
# ========================================

def test_modulation_constants():
    assert modulation_f(0.0) == 0.0
    assert modulation_f_prime(0.0) == 0.0
    assert modulation_f(0.1) == pytest.approx(0.1 - 0.02 * math.tanh(5.0), abs=1e-12)
    assert modulation_f(0.1) == pytest.approx(0.08002, abs=1e-5)


def test_regularizer_constants():
    assert regularizer_g(0.0) == pytest.approx(0.125)
    assert regularizer_g(10.0) < 1e-60 or regularizer_g(10.0) == 0.0
    assert regularizer_g_prime(0.0) == pytest.approx(-1.0)
    t = np.linspace(0.0, 2.0, 50)
    assert np.all(np.diff(regularizer_g(t)) <= 0)


def test_loss_constants():
    assert pipts_loss(0.0, 0.0) == pytest.approx(0.125)
    assert pipts_loss(0.0, 1.0) == pytest.approx(0.125 * (1.0 - math.tanh(8.0)), rel=1e-6)
    assert pipts_loss(0.0, 1.0) == pytest.approx(2.8e-8, rel=0.05)
    assert pipts_loss(0.1, 1.0) == pytest.approx(0.08002 + 2.8e-8, abs=1e-5)


def test_loss_gradient_limits():
    dtheta = np.array([0.5, -2.0])
    npt.assert_allclose(pipts_loss_grad(3.0, 0.0, 0.0, dtheta), -dtheta)
    saturated = pipts_loss_grad(0.2, 0.3, 50.0, dtheta)
    npt.assert_allclose(saturated, math.tanh(15.0) ** 2 * 0.2 * dtheta)


# ========================================
# Auxiliary terms
# ========================================

def test_focal_nll_values():
    probs = np.array([[[0.5, 0.5]]])
    assert focal_balanced_nll(probs, np.array([[0]]), [0.5, 0.5], gamma=0.0) == pytest.approx(0.5 * math.log(2))
    certain = np.array([[[1.0, 0.0]]])
    assert focal_balanced_nll(certain, np.array([[0]]), [0.5, 0.5]) == 0.0


def test_focal_nll_clamps_zero_probability():
    probs = np.array([[[1.0, 0.0]]])
    value = focal_balanced_nll(probs, np.array([[1]]), [1.0, 1.0])
    assert value == pytest.approx(-math.log(1e-12))


def test_kernel_orthonormality():
    assert kernel_orthonormality_penalty(np.eye(4)) == pytest.approx(0.0)
    assert kernel_orthonormality_penalty(2.0 * np.eye(5)) == pytest.approx(3.0 * math.sqrt(5))


def test_multi_task_terms():
    assert restoration_l1(np.ones((2, 2)), np.zeros((2, 2))) == 1.0
    assert zernike_l2([0.1, 0.2, 0.0], [0.0, 0.0, 0.0]) == pytest.approx(0.05)
    with pytest.raises(InvalidArgumentError):
        zernike_l2([0.1], [0.1, 0.2])
