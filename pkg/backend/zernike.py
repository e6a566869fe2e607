"""
Aberro Zernike Engine
Orthonormal Zernike polynomials (OSA/ANSI single index), wavefront synthesis
and coefficient sampling for aberration augmentation.
"""
import math
import logging
from functools import lru_cache

import numpy as np

from errors import InvalidArgumentError
from models import ZernikeVector, WavefrontMap

logger = logging.getLogger(__name__)

# Indices drawn during augmentation: oblique astigmatism, defocus, orthogonal astigmatism
SECOND_ORDER = (3, 4, 5)


# ========================================
# Indexing
# ========================================

def osa_to_nm(j: int):
    """OSA/ANSI index -> (radial order n, azimuthal frequency m)"""
    if j < 0:
        raise InvalidArgumentError(f"OSA index must be non-negative, got {j}")
    n = int(math.ceil((-3.0 + math.sqrt(9.0 + 8.0 * j)) / 2.0))
    m = 2 * j - n * (n + 2)
    return n, m


def nm_to_osa(n: int, m: int) -> int:
    if n < 0 or abs(m) > n or (n - m) % 2:
        raise InvalidArgumentError(f"Invalid Zernike order (n={n}, m={m})")
    return (n * (n + 2) + m) // 2


@lru_cache(maxsize=64)
def _radial_coefficients(n: int, m: int):
    """(power, coefficient) pairs of R_n^|m|"""
    m = abs(m)
    terms = []
    for k in range((n - m) // 2 + 1):
        c = ((-1) ** k * math.factorial(n - k)
             / (math.factorial(k) * math.factorial((n + m) // 2 - k) * math.factorial((n - m) // 2 - k)))
        terms.append((n - 2 * k, c))
    return tuple(terms)


def _zernike(j: int, rho, phi):
    n, m = osa_to_nm(j)
    radial = sum(c * rho ** p for p, c in _radial_coefficients(n, m))
    norm = math.sqrt(2.0 * (n + 1)) if m else math.sqrt(n + 1.0)
    if m > 0:
        return norm * radial * np.cos(m * phi)
    if m < 0:
        return norm * radial * np.sin(-m * phi)
    return norm * radial * np.ones_like(phi)


# ========================================
# Evaluation
# ========================================

def zernike_eval(osa_index: int, rho: float, phi: float) -> float:
    """
    Unit-norm Zernike polynomial, so that alpha_n = <W, Z_n> (area-averaged
    over the unit disk) is the exact expansion coefficient.
    """
    if osa_index < 0:
        raise InvalidArgumentError(f"OSA index must be non-negative, got {osa_index}")
    if not 0.0 <= rho <= 1.0:
        raise InvalidArgumentError(f"rho must lie in [0, 1], got {rho}")
    return float(_zernike(osa_index, np.float64(rho), np.float64(phi)))


def pupil_coordinates(n: int):
    """Polar coordinates of pixel centers and the inscribed-disk mask of an n x n grid"""
    if n < 16:
        raise InvalidArgumentError(f"Grid size must be >= 16, got {n}")
    axis = 2.0 * (np.arange(n) + 0.5) / n - 1.0
    x, y = np.meshgrid(axis, axis)
    rho = np.hypot(x, y)
    phi = np.arctan2(y, x)
    return rho, phi, rho <= 1.0


def basis_map(osa_index: int, n: int) -> np.ndarray:
    rho, phi, mask = pupil_coordinates(n)
    out = np.zeros((n, n))
    out[mask] = _zernike(osa_index, rho[mask], phi[mask])
    return out


def wavefront_map(alpha: ZernikeVector, n: int) -> WavefrontMap:
    """W = sum_n alpha_n Z_n on the pupil disk, exactly zero outside"""
    rho, phi, mask = pupil_coordinates(n)
    grid = np.zeros((n, n))
    r, p = rho[mask], phi[mask]
    values = np.zeros(r.shape)
    for j, a in zip(alpha.osa, alpha.alpha):
        if a != 0.0:
            values += a * _zernike(j, r, p)
    grid[mask] = values
    return WavefrontMap(grid=grid, mask=mask, n=n)


def project(w: WavefrontMap, osa_index: int) -> float:
    """<W, Z_j> averaged over the masked disk"""
    basis = basis_map(osa_index, w.n)
    return float(np.mean(w.grid[w.mask] * basis[w.mask]))


def inner_product(j: int, k: int, n: int = 512) -> float:
    rho, phi, mask = pupil_coordinates(n)
    return float(np.mean(_zernike(j, rho[mask], phi[mask]) * _zernike(k, rho[mask], phi[mask])))


# ========================================
# Sampling
# ========================================

def sample_zernike(rng_seed: int, half_range: float) -> ZernikeVector:
    """alpha_3, alpha_4, alpha_5 independent uniform on [-half_range, half_range]"""
    if half_range < 0:
        raise InvalidArgumentError(f"half_range must be non-negative, got {half_range}")
    rng = np.random.default_rng(rng_seed)
    values = rng.uniform(-half_range, half_range, size=len(SECOND_ORDER))
    return ZernikeVector(SECOND_ORDER, tuple(float(v) for v in values))
