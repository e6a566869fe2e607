import numpy as np
import numpy.testing as npt
import pytest

from errors import DegenerateInputError, InsufficientDataError, InvalidArgumentError
from models import FitResult, SampleSeries
from sensitivity import (
    confidence_band, extremum_location, fit_sensitivity, gauge_covariance, jacobian, mc_covariance, model,
    sensitivity_report, unexplained_variance
)

TRUE_BETA = np.array([2.0, 0.8, 5.0, 0.5, 1.0])
DECAY_BETA = np.array([0.5, -8.0, 0.2, 0.1, 0.3])


def exponential_series(seed=0, n=60, sigma=0.05):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 10.0, n)
    y = model(x, TRUE_BETA) + rng.normal(0.0, sigma, size=n)
    return SampleSeries(x, y, np.full(n, sigma))


def linear_series(seed=0, n=40, sigma=0.1):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 4.0, n)
    return SampleSeries(x, 0.5 * x + 1.0 + rng.normal(0.0, sigma, size=n), np.full(n, sigma))


def decay_series(seed=0, n=60, sigma=1e-3):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n)
    y = model(x, DECAY_BETA) + rng.normal(0.0, sigma, size=n)
    return SampleSeries(x, y, np.full(n, sigma))


def test_jacobian_matches_finite_differences():
    x = np.linspace(0.0, 10.0, 7)
    h = 1e-6
    for q in range(5):
        step = np.zeros(5)
        step[q] = h
        numeric = (model(x, TRUE_BETA + step) - model(x, TRUE_BETA - step)) / (2 * h)
        npt.assert_allclose(jacobian(x, TRUE_BETA)[:, q], numeric, rtol=1e-6, atol=1e-6)


def test_recovers_known_parameters_with_pinned_beta3():
    fit = fit_sensitivity(exponential_series(), fixed_beta3=5.0, structure='full')
    assert fit.model == 'full'
    assert fit.fixed_beta3 == 5.0
    assert fit.beta[2] == 5.0
    sigma = np.sqrt(np.diag(fit.covariance))
    for q in (0, 1, 3, 4):
        assert abs(fit.beta[q] - TRUE_BETA[q]) <= 4 * sigma[q]
    assert fit.covariance[2, 2] == 0.0


def test_free_fit_recovers_decay_within_combined_uncertainty():
    s = decay_series()
    fit = sensitivity_report(s, n_mc=200, seed=0)
    assert fit.model == 'full'
    assert fit.fixed_beta3 is None
    sigma = np.sqrt(np.diag(fit.covariance))
    assert np.all(sigma > 0)
    z = np.abs(fit.beta - DECAY_BETA) / sigma
    assert np.all(z <= 3.0), z
    identified = fit.beta[0] * np.exp(-fit.beta[1] * fit.beta[2])
    assert identified == pytest.approx(0.5 * np.exp(1.6), rel=0.02)
    npt.assert_allclose(model(s.x, fit.beta), model(s.x, DECAY_BETA), atol=5e-3)


def test_gauge_direction_leaves_the_band_unchanged():
    s = decay_series(1)
    fit = fit_sensitivity(s, structure='full')
    gauge = gauge_covariance(s, fit)
    assert gauge[2, 2] == pytest.approx(1.0 / 12.0)
    grid = np.linspace(0.0, 1.0, 21)
    with_gauge = confidence_band(fit, grid)
    without = confidence_band(FitResult(fit.beta, fit.covariance - gauge), grid)
    npt.assert_allclose(with_gauge['upper'], without['upper'], rtol=1e-6, atol=1e-9)
    pinned = fit_sensitivity(s, fixed_beta3=0.2, structure='full')
    npt.assert_array_equal(gauge_covariance(s, pinned), np.zeros((5, 5)))


def test_auto_structure_keeps_the_exponential():
    fit = fit_sensitivity(exponential_series(1), fixed_beta3=5.0)
    assert fit.model == 'full'
    assert fit.unexplained_variance < 0.01


def test_linear_structure_matches_ols():
    s = linear_series()
    fit = fit_sensitivity(s, structure='linear')
    slope, intercept = np.polyfit(s.x, s.y, 1)
    assert fit.model == 'linear'
    assert fit.beta[0] == 0.0 and fit.beta[1] == 0.0
    assert fit.beta[3] == pytest.approx(slope, rel=1e-9)
    assert fit.beta[4] == pytest.approx(intercept, rel=1e-9)


def test_extremum_of_a_bump():
    x = np.linspace(0.0, 10.0, 101)
    assert extremum_location(x, np.exp(-(x - 3.0) ** 2)) == pytest.approx(3.0, abs=0.2)


def test_fit_input_checks():
    with pytest.raises(InsufficientDataError):
        fit_sensitivity(SampleSeries(np.arange(9.0), np.arange(9.0)))
    with pytest.raises(DegenerateInputError):
        fit_sensitivity(SampleSeries(np.ones(12), np.arange(12.0)))
    with pytest.raises(InvalidArgumentError):
        fit_sensitivity(linear_series(), structure='cubic')


# ========================================
# Uncertainty
# ========================================

def test_mc_covariance_matches_ols_for_a_line():
    s = linear_series(3)
    fit = fit_sensitivity(s, structure='linear')
    mc = mc_covariance(s, n_mc=2000, seed=1, fit=fit)
    ols = fit.covariance
    for q in (3, 4):
        assert mc[q, q] == pytest.approx(ols[q, q], rel=0.15)
    assert abs(mc[3, 4] - ols[3, 4]) <= 0.15 * np.sqrt(ols[3, 3] * ols[4, 4])
    npt.assert_allclose(mc[:3, :3], 0.0, atol=1e-20)


def test_mc_is_reproducible():
    s = linear_series(4)
    fit = fit_sensitivity(s, structure='linear')
    npt.assert_array_equal(mc_covariance(s, 50, seed=9, fit=fit), mc_covariance(s, 50, seed=9, fit=fit))


def test_mc_needs_uncertainties():
    s = SampleSeries(np.arange(12.0), np.arange(12.0) * 2)
    with pytest.raises(InvalidArgumentError):
        mc_covariance(s, 10)


def test_band_width_is_linear_in_k():
    fit = fit_sensitivity(linear_series(), structure='linear')
    grid = np.linspace(0.0, 4.0, 9)
    one = confidence_band(fit, grid, k=1.0)
    two = confidence_band(fit, grid, k=2.0)
    half_one = np.subtract(one['upper'], one['f'])
    half_two = np.subtract(two['upper'], two['f'])
    npt.assert_allclose(half_two, 2.0 * half_one, rtol=1e-12)
    assert np.all(half_one > 0)


def test_band_rejects_bad_covariance():
    with pytest.raises(InvalidArgumentError):
        confidence_band(FitResult(TRUE_BETA, -np.eye(5)), [0.0, 1.0])
    asymmetric = np.eye(5)
    asymmetric[0, 1] = 0.5
    with pytest.raises(InvalidArgumentError):
        confidence_band(FitResult(TRUE_BETA, asymmetric), [0.0, 1.0])


def test_unexplained_variance_bounds():
    x = np.linspace(0.0, 1.0, 20)
    s = SampleSeries(x, 3.0 * x - 1.0)
    perfect = FitResult(np.array([0.0, 0.0, 0.0, 3.0, -1.0]), np.zeros((5, 5)))
    assert unexplained_variance(perfect, s) == pytest.approx(0.0, abs=1e-20)
    mean_only = FitResult(np.array([0.0, 0.0, 0.0, 0.0, s.y.mean()]), np.zeros((5, 5)))
    assert unexplained_variance(mean_only, s) == pytest.approx(19 / 15)


def test_report_has_a_band_on_the_grid():
    fit = sensitivity_report(linear_series(), n_mc=100, grid_points=11)
    assert len(fit.band['x']) == 11
    assert fit.band['k'] == 1.96
    assert set(fit.to_dict()) >= {'beta', 'covariance', 'unexplained_variance', 'band', 'model'}
