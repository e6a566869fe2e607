"""
Aberro Fourier Optics
Pupil -> PSF -> OTF/MTF chain, the scalar optical merit functions
(MTF at half-Nyquist, Strehl ratio, OIG) and PSF-based image degradation.
"""
import logging
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from errors import InvalidArgumentError, DegenerateInputError, OutOfBandError
from models import (
    OpticalConfig, WavefrontMap, PSF, SpectralGrid, OpticalMetrics, ZernikeVector
)
from zernike import wavefront_map

logger = logging.getLogger(__name__)

MONOTONE_TOLERANCE = 1e-3


# ========================================
# Pupil / PSF / OTF
# ========================================

def pupil_function(w: WavefrontMap, cfg: OpticalConfig) -> np.ndarray:
    """P = mask * exp(i 2 pi W), centered in a (pad_factor * grid_n)^2 zero field"""
    if w.n > cfg.grid_n:
        raise InvalidArgumentError(f"Wavefront grid {w.n} exceeds config grid_n {cfg.grid_n}")
    m = cfg.field_n
    field = np.zeros((m, m), dtype=complex)
    start = (m - w.n) // 2
    pupil = np.where(w.mask, np.exp(2j * np.pi * w.grid), 0.0)
    field[start:start + w.n, start:start + w.n] = pupil
    return field


def psf(p: np.ndarray, cfg: OpticalConfig, pupil_samples: int = None) -> PSF:
    """
    Intensity PSF |FT(P)|^2, centered and normalized to unit sum.
    The pupil diameter spans `pupil_samples` samples (defaults to grid_n), which
    fixes the image-plane spacing lambda * N * n / M.
    """
    n = pupil_samples or cfg.grid_n
    amplitude = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(p)))
    intensity = amplitude.real ** 2 + amplitude.imag ** 2
    total = intensity.sum()
    if not total > 0:
        raise DegenerateInputError("Pupil function is identically zero")
    spacing = cfg.wavelength * cfg.f_number * n / p.shape[0]
    return PSF(grid=intensity / total, sample_spacing=spacing, cutoff=cfg.cutoff)


def otf(p: PSF, mtf_mode: str = 'real_part') -> SpectralGrid:
    """OTF = FT(PSF) / FT(PSF)(0); MTF is the real part (or modulus) of the OTF"""
    m = p.grid.shape[0]
    spectrum = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(p.grid)))
    center = (m // 2, m // 2)
    spectrum = spectrum / spectrum[center]
    spectrum[center] = 1.0 + 0.0j
    mtf = spectrum.real.copy() if mtf_mode == 'real_part' else np.abs(spectrum)
    return SpectralGrid(
        otf=spectrum,
        mtf=mtf,
        freq_step=1.0 / (m * p.sample_spacing),
        cutoff=p.cutoff,
        mtf_mode=mtf_mode
    )


def spectral_grid(alpha: ZernikeVector, cfg: OpticalConfig) -> SpectralGrid:
    return otf(compute_psf(alpha, cfg), cfg.mtf_mode)


def compute_psf(alpha: ZernikeVector, cfg: OpticalConfig) -> PSF:
    w = wavefront_map(alpha, cfg.grid_n)
    return psf(pupil_function(w, cfg), cfg, w.n)


@lru_cache(maxsize=8)
def diffraction_limited(cfg: OpticalConfig) -> SpectralGrid:
    """Aberration-free reference grid, cached per (frozen) config"""
    grid = spectral_grid(ZernikeVector((), ()), cfg)
    for arr in (grid.otf, grid.mtf):
        arr.setflags(write=False)
    return grid


# ========================================
# MTF profile
# ========================================

def radial_mtf(s: SpectralGrid) -> np.ndarray:
    """Radially averaged MTF, bin width one frequency step, index = radius in bins"""
    m = s.mtf.shape[0]
    k = np.arange(m) - m // 2
    r = np.hypot(*np.meshgrid(k, k))
    idx = np.rint(r).astype(np.int64).ravel()
    sums = np.bincount(idx, weights=s.mtf.ravel())
    counts = np.bincount(idx)
    return sums / np.maximum(counts, 1)


def mtf_is_monotone(s: SpectralGrid, tol: float = MONOTONE_TOLERANCE) -> bool:
    """True when the radial profile never rises by more than `tol` inside the passband"""
    profile = radial_mtf(s)
    last = int(min(np.floor(s.cutoff / s.freq_step), profile.size - 1)) if np.isfinite(s.cutoff) else profile.size - 1
    steps = np.diff(profile[:last + 1])
    return bool(np.all(steps <= tol))


def mtf_at_half_nyquist(s: SpectralGrid, cfg: OpticalConfig) -> float:
    """
    MTF at a quarter of the sampling frequency, read off the radial profile.

    The radially averaged MTF is interpolated linearly in 1-D between integer
    radius bins; the 2-D MTF is not interpolated bilinearly.
    """
    nu = cfg.half_nyquist
    if nu > s.cutoff:
        raise OutOfBandError(f"Half-Nyquist {nu:.4g} c/m lies beyond the optical cutoff {s.cutoff:.4g} c/m")
    profile = radial_mtf(s)
    return float(np.interp(nu / s.freq_step, np.arange(profile.size), profile))


# ========================================
# Spectral integrals
# ========================================

def _check_geometry(s: SpectralGrid, s_diff: SpectralGrid):
    if s.geometry() != s_diff.geometry() or s.mtf_mode != s_diff.mtf_mode:
        raise InvalidArgumentError("Spectral grids do not share geometry")


def strehl(s: SpectralGrid, s_diff: SpectralGrid) -> float:
    _check_geometry(s, s_diff)
    return float(s.mtf.sum() / s_diff.mtf.sum())


def oig(s: SpectralGrid, s_diff: SpectralGrid) -> float:
    _check_geometry(s, s_diff)
    return float(np.sum(s.mtf ** 2) / np.sum(s_diff.mtf ** 2))


def optical_metrics(alpha: ZernikeVector, cfg: OpticalConfig = None) -> OpticalMetrics:
    cfg = cfg or OpticalConfig()
    s = spectral_grid(alpha, cfg)
    s_diff = diffraction_limited(cfg)
    metrics = OpticalMetrics(
        mtf_half_nyquist=mtf_at_half_nyquist(s, cfg),
        strehl=strehl(s, s_diff),
        oig=oig(s, s_diff),
        mtf_monotone=mtf_is_monotone(s)
    )
    logger.debug(f"Optical metrics for {alpha.to_dict()}: {metrics.to_dict()}")
    return metrics


# ========================================
# Degradation
# ========================================

def resample_psf(p: PSF, pixel_pitch: float, energy: float = 0.999, max_size: int = 31) -> PSF:
    """
    Bin the oversampled PSF onto the sensor pixel grid and crop to the smallest
    odd kernel holding `energy` of the light (at most max_size), unit sum.
    """
    if pixel_pitch <= 0:
        raise InvalidArgumentError("pixel_pitch must be positive")
    m = p.grid.shape[0]
    offsets = (np.arange(m) - m // 2) * p.sample_spacing
    bins = np.rint(offsets / pixel_pitch).astype(np.int64)
    half = int(np.abs(bins).max())
    kernel = np.zeros((2 * half + 1, 2 * half + 1))
    rows, cols = np.meshgrid(bins + half, bins + half, indexing='ij')
    np.add.at(kernel, (rows, cols), p.grid)

    limit = min(half, max_size // 2)
    size = limit
    for h in range(limit + 1):
        if kernel[half - h:half + h + 1, half - h:half + h + 1].sum() >= energy:
            size = h
            break
    cropped = kernel[half - size:half + size + 1, half - size:half + size + 1]
    return PSF(grid=cropped / cropped.sum(), sample_spacing=pixel_pitch, cutoff=p.cutoff)


def degrade_image(img: np.ndarray, kernel: PSF) -> np.ndarray:
    """Reflect-padded linear convolution with the PSF, clipped to [0, 1]"""
    img = np.asarray(img, dtype=float)
    k = kernel.grid
    if k.shape[0] > min(img.shape) or k.shape[1] > min(img.shape):
        raise DegenerateInputError(f"PSF of size {k.shape} is wider than the image {img.shape}")
    c = k.shape[0] // 2
    if c == 0:
        return np.clip(img * k[0, 0], 0.0, 1.0)
    padded = np.pad(img, c, mode='reflect')
    full = fftconvolve(padded, k, mode='full')
    h, w = img.shape
    return np.clip(full[2 * c:2 * c + h, 2 * c:2 * c + w], 0.0, 1.0)


def degrade_with(img: np.ndarray, alpha: ZernikeVector, cfg: OpticalConfig) -> np.ndarray:
    return degrade_image(img, resample_psf(compute_psf(alpha, cfg), cfg.pixel_pitch))
