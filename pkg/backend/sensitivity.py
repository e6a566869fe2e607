"""
Aberro Sensitivity Regression
f(x; beta) = beta1 * exp(beta2 * (x - beta3)) + beta4 * x + beta5, fitted by
multi-start Levenberg-Marquardt, with Monte-Carlo parameter covariance, law of
uncertainty propagation bands and the dof-corrected unexplained variance.
"""
import logging
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.interpolate import UnivariateSpline
from scipy.optimize import least_squares

from config import worker_count
from errors import (
    DegenerateInputError, FitFailureError, InsufficientDataError, InvalidArgumentError
)
from models import FitResult, SampleSeries

logger = logging.getLogger(__name__)

N_PARAMS = 5
MIN_POINTS = 10
MAX_EXPONENT = 700.0
XTOL = 1e-8
MAX_NFEV = 500
MAX_MC_FAILURE = 0.2
FREE = [0, 1, 2, 3, 4]
PINNED = [0, 1, 3, 4]


# ========================================
# Model
# ========================================

def _exp_term(x, beta):
    return np.exp(np.clip(beta[1] * (x - beta[2]), -MAX_EXPONENT, MAX_EXPONENT))


def model(x, beta) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return beta[0] * _exp_term(x, beta) + beta[3] * x + beta[4]


def jacobian(x, beta) -> np.ndarray:
    """n x 5 matrix of df/dbeta_q"""
    x = np.asarray(x, dtype=float)
    e = _exp_term(x, beta)
    return np.column_stack([
        e,
        beta[0] * (x - beta[2]) * e,
        -beta[0] * beta[1] * e,
        x,
        np.ones_like(x)
    ])


def _weights(s: SampleSeries) -> np.ndarray:
    return np.ones(s.n) if s.sigma_y is None else 1.0 / s.sigma_y


# ========================================
# Fitting
# ========================================

def ols_line(x, y, weights=None):
    """Weighted straight line; returns (slope, intercept, covariance of (slope, intercept))"""
    w = np.ones_like(x) if weights is None else weights
    design = np.column_stack([x, np.ones_like(x)]) * w[:, None]
    coef, *_ = np.linalg.lstsq(design, y * w, rcond=None)
    cov = np.linalg.pinv(design.T @ design)
    return float(coef[0]), float(coef[1]), cov


def extremum_location(x, y) -> float:
    """x where a smoothing spline deviates most from the straight-line trend"""
    xs, inverse = np.unique(x, return_inverse=True)
    ys = np.bincount(inverse, weights=y) / np.bincount(inverse)
    grid = np.linspace(xs[0], xs[-1], 512)
    slope, intercept, _ = ols_line(xs, ys)
    if xs.size >= 4:
        # noise level from first differences
        noise = np.sum(np.diff(ys) ** 2) / (2.0 * (xs.size - 1))
        spline = UnivariateSpline(xs, ys, k=3, s=xs.size * noise)
        trend = spline(grid)
    else:
        trend = np.interp(grid, xs, ys)
    return float(grid[np.argmax(np.abs(trend - (slope * grid + intercept)))])


def _starts(x, y, beta3):
    slope, intercept, _ = ols_line(x, y)
    amplitude = float(np.max(np.abs(y - (slope * x + intercept)))) or 1.0
    span = float(np.ptp(x))
    rates = (1.0 / span, 10.0 / span)
    return [
        np.array([sign * amplitude, rate_sign * rate, beta3, slope, intercept])
        for sign in (1.0, -1.0)
        for rate in rates
        for rate_sign in (1.0, -1.0)
    ]


def _solve(x, y, w, beta0, fixed_beta3=None):
    """LM fit from `beta0`, with beta3 free unless pinned; returns (beta, cost) or None"""
    free = FREE if fixed_beta3 is None else PINNED
    template = np.asarray(beta0, dtype=float).copy()
    if fixed_beta3 is not None:
        template[2] = fixed_beta3

    def unpack(p):
        beta = template.copy()
        beta[free] = p
        return beta

    def residuals(p):
        return (model(x, unpack(p)) - y) * w

    def jac(p):
        return jacobian(x, unpack(p))[:, free] * w[:, None]

    try:
        result = least_squares(residuals, template[free], jac=jac, method='lm', xtol=XTOL, max_nfev=MAX_NFEV)
    except (ValueError, FloatingPointError) as e:
        logger.debug(f"LM start failed: {e}")
        return None
    if result.status < 0 or not np.isfinite(result.cost) or not np.all(np.isfinite(result.x)):
        return None
    return unpack(result.x), float(result.cost)


def _linear_fit(x, y, w, beta3):
    slope, intercept, _ = ols_line(x, y, w)
    beta = np.array([0.0, 0.0, beta3, slope, intercept])
    return beta, float(0.5 * np.sum(((model(x, beta) - y) * w) ** 2))


def fit_sensitivity(s: SampleSeries, fixed_beta3: Optional[float] = None, structure: str = 'auto') -> FitResult:
    """
    Weighted least squares fit of the exponential + linear model.

    All five parameters are free. Only beta1 * exp(-beta2 * beta3) is identified,
    so every start seeds beta3 at the extremum of a smoothing spline and the
    reported covariance carries that gauge freedom (see `gauge_covariance`).
    `fixed_beta3` pins beta3 instead. structure 'auto' keeps the nested straight
    line (beta1 = beta2 = 0) whenever its dof-corrected MSE is not worse than the
    full model's.
    """
    if s.n < MIN_POINTS:
        raise InsufficientDataError(f"Need at least {MIN_POINTS} points, got {s.n}")
    if np.ptp(s.x) == 0:
        raise DegenerateInputError("x has no spread")
    if structure not in ('auto', 'full', 'linear'):
        raise InvalidArgumentError(f"Unknown fit structure {structure!r}")

    w = _weights(s)
    beta3 = float(extremum_location(s.x, s.y) if fixed_beta3 is None else fixed_beta3)
    lin_beta, lin_cost = _linear_fit(s.x, s.y, w, beta3)

    best = None
    diagnostics = []
    if structure != 'linear':
        for start in _starts(s.x, s.y, beta3):
            solved = _solve(s.x, s.y, w, start, fixed_beta3)
            diagnostics.append({'start': start.tolist(), 'cost': None if solved is None else solved[1]})
            if solved is not None and (best is None or solved[1] < best[1]):
                best = solved
        if best is None and structure == 'full':
            raise FitFailureError("No Levenberg-Marquardt start converged", {'starts': diagnostics})
        if best is None:
            logger.warning("All exponential starts failed; falling back to the straight line")

    # beta1 and beta3 share one identified direction, so the full model spends 4 dof
    use_linear = structure == 'linear' or best is None or (
        structure == 'auto' and lin_cost / (s.n - 2) <= best[1] / (s.n - 4)
    )
    beta, cost = (lin_beta, lin_cost) if use_linear else best
    fit = FitResult(
        beta=beta,
        covariance=np.zeros((N_PARAMS, N_PARAMS)),
        model='linear' if use_linear else 'full',
        fixed_beta3=None if fixed_beta3 is None else beta3,
        cost=cost
    )
    fit.covariance = _asymptotic_covariance(s, fit) + gauge_covariance(s, fit)
    fit.unexplained_variance = unexplained_variance(fit, s)
    logger.info(f"Sensitivity fit ({fit.model}): beta = {np.round(beta, 6).tolist()}")
    return fit


def _asymptotic_covariance(s: SampleSeries, fit: FitResult) -> np.ndarray:
    """Gauss-Newton covariance with beta3 held at its fitted value"""
    w = _weights(s)
    free = [3, 4] if fit.model == 'linear' else PINNED
    j = jacobian(s.x, fit.beta)[:, free] * w[:, None]
    cov_free = np.linalg.pinv(j.T @ j)
    if s.sigma_y is None:
        dof = max(s.n - len(free), 1)
        cov_free = cov_free * np.sum(((model(s.x, fit.beta) - s.y) * w) ** 2) / dof
    cov = np.zeros((N_PARAMS, N_PARAMS))
    cov[np.ix_(free, free)] = cov_free
    return cov


def gauge_covariance(s: SampleSeries, fit: FitResult) -> np.ndarray:
    """
    Covariance along the unidentified direction of a free-beta3 full fit.

    Moving beta3 by d and beta1 by beta1 * beta2 * d leaves the model unchanged.
    beta3 is taken as uniform over the observed x range, so the direction
    (beta1 * beta2, 0, 1, 0, 0) gets variance ptp(x)^2 / 12. The Jacobian is
    orthogonal to it, so confidence bands do not change.
    """
    if fit.model == 'linear' or fit.fixed_beta3 is not None:
        return np.zeros((N_PARAMS, N_PARAMS))
    direction = np.array([fit.beta[0] * fit.beta[1], 0.0, 1.0, 0.0, 0.0])
    return np.outer(direction, direction) * np.ptp(s.x) ** 2 / 12.0


# ========================================
# Uncertainty
# ========================================

def _refit(s: SampleSeries, fit: FitResult, child: np.random.SeedSequence):
    rng = np.random.default_rng(child)
    y = s.y + rng.normal(0.0, s.sigma_y)
    w = _weights(s)
    if fit.model == 'linear':
        return _linear_fit(s.x, y, w, float(fit.beta[2]))[0]
    solved = _solve(s.x, y, w, np.asarray(fit.beta, dtype=float), fit.fixed_beta3)
    return None if solved is None else solved[0]


def mc_covariance(s: SampleSeries, n_mc: int = 1000, seed: int = 0, fit: FitResult = None,
                  n_jobs: int = None) -> np.ndarray:
    """
    Covariance of beta over n_mc refits to y_i + N(0, sigma_i^2), plus the gauge
    term of a free-beta3 fit. Each refit starts from the reference fit and keeps its
    structure and any pinned beta3. Seeds are split per resample.
    """
    if s.sigma_y is None:
        raise InvalidArgumentError("Monte-Carlo covariance needs per-point sigma_y")
    if n_mc < 2:
        raise InvalidArgumentError("n_mc must be >= 2")
    fit = fit or fit_sensitivity(s)
    children = np.random.SeedSequence(seed).spawn(n_mc)
    betas = Parallel(n_jobs=worker_count(n_jobs))(delayed(_refit)(s, fit, c) for c in children)
    good = np.array([b for b in betas if b is not None])
    failures = n_mc - len(good)
    if failures > MAX_MC_FAILURE * n_mc:
        raise FitFailureError(f"{failures}/{n_mc} Monte-Carlo refits failed", {'failures': failures})
    if failures:
        logger.warning(f"{failures}/{n_mc} Monte-Carlo refits failed and were dropped")
    return np.cov(good.T, ddof=1) + gauge_covariance(s, fit)


def confidence_band(fit: FitResult, x_grid, k: float = 1.96) -> dict:
    """f(x) +- k sqrt(g^T C g), g = df/dbeta"""
    cov = np.asarray(fit.covariance, dtype=float)
    if cov.shape != (N_PARAMS, N_PARAMS) or not np.allclose(cov, cov.T, atol=1e-12):
        raise InvalidArgumentError("Covariance must be a symmetric 5 x 5 matrix")
    eig = np.linalg.eigvalsh(cov)
    if eig.min() < -1e-10 * max(1.0, abs(eig.max())):
        raise InvalidArgumentError(f"Covariance is not positive semi-definite (min eigenvalue {eig.min():.3g})")
    x_grid = np.asarray(x_grid, dtype=float)
    g = jacobian(x_grid, fit.beta)
    variance = np.maximum(np.einsum('ij,jk,ik->i', g, cov, g), 0.0)
    sigma = k * np.sqrt(variance)
    f = model(x_grid, fit.beta)
    return {
        'x': x_grid.tolist(),
        'f': f.tolist(),
        'lower': (f - sigma).tolist(),
        'upper': (f + sigma).tolist(),
        'k': k
    }


def unexplained_variance(fit: FitResult, s: SampleSeries) -> float:
    """[SSR / (n - 5)] / var(y); values above 1 mean no edge over the mean predictor"""
    if s.n <= N_PARAMS:
        raise InsufficientDataError(f"Need more than {N_PARAMS} points, got {s.n}")
    residuals = s.y - model(s.x, fit.beta)
    return float(np.sum(residuals ** 2) / (s.n - N_PARAMS) / np.var(s.y, ddof=1))


def sensitivity_report(s: SampleSeries, n_mc: int = 1000, k: float = 1.96, seed: int = 0,
                       fixed_beta3: float = None, grid_points: int = 101,
                       x_grid: Sequence[float] = None) -> FitResult:
    """Fit, Monte-Carlo covariance (when sigma_y is known) and the band on a grid"""
    fit = fit_sensitivity(s, fixed_beta3)
    if s.sigma_y is not None and n_mc:
        fit.covariance = mc_covariance(s, n_mc, seed, fit)
    grid = np.linspace(s.x.min(), s.x.max(), grid_points) if x_grid is None else x_grid
    fit.band = confidence_band(fit, grid, k)
    return fit
