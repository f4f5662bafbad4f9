"""PSNR and SSIM in the band-wise aggregation used for cube reporting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .cube import HSICube, RANGE_UNIT01
from .errors import ContractError

_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    mpsnr: float
    mssim: float
    psnr_per_band: tuple[float, ...]
    ssim_per_band: tuple[float, ...]


def psnr_band(ref: np.ndarray, est: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); identical inputs give +inf."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ContractError(f"shape mismatch: {ref.shape} vs {est.shape}")
    mse = float(np.mean((ref - est) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_window(size: int = _WINDOW_SIZE, sigma: float = _WINDOW_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    window = np.outer(g, g)
    return window / window.sum()


_WINDOW = _gaussian_window()


def ssim_band(ref: np.ndarray, est: np.ndarray, peak: float = 1.0) -> float:
    """Mean local structural similarity over fully interior windows.

    Gaussian-weighted 11x11 windows with sigma 1.5 and the usual stability
    constants (0.01*peak)^2 and (0.03*peak)^2.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ContractError(f"shape mismatch: {ref.shape} vs {est.shape}")
    if min(ref.shape) < _WINDOW_SIZE:
        raise ContractError(
            f"image {ref.shape} smaller than the {_WINDOW_SIZE}x{_WINDOW_SIZE} window"
        )
    c1 = (_K1 * peak) ** 2
    c2 = (_K2 * peak) ** 2
    w = _WINDOW
    mu_x = convolve2d(ref, w, mode="valid")
    mu_y = convolve2d(est, w, mode="valid")
    sxx = convolve2d(ref * ref, w, mode="valid") - mu_x * mu_x
    syy = convolve2d(est * est, w, mode="valid") - mu_y * mu_y
    sxy = convolve2d(ref * est, w, mode="valid") - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def evaluate(ref: HSICube, est: HSICube, per_cube_psnr: bool = False) -> MetricReport:
    """Band-wise metrics between two unit01 cubes.

    ``mpsnr``/``mssim`` are arithmetic means over bands; bands with infinite
    PSNR are dropped from the mean unless every band is infinite, in which
    case the mean is infinite as well. ``per_cube_psnr`` switches the PSNR
    aggregate to a single MSE pooled over all voxels.
    """
    if ref.shape != est.shape:
        raise ContractError(f"cube shape mismatch: {ref.shape} vs {est.shape}")
    if ref.range_tag != RANGE_UNIT01 or est.range_tag != RANGE_UNIT01:
        raise ContractError("metrics expect unit01 cubes")
    ra, ea = ref.array(), est.array()
    psnrs = tuple(psnr_band(ra[:, :, k], ea[:, :, k]) for k in range(ref.bands))
    ssims = tuple(ssim_band(ra[:, :, k], ea[:, :, k]) for k in range(ref.bands))
    finite = [v for v in psnrs if np.isfinite(v)]
    if per_cube_psnr:
        mpsnr = psnr_band(ra, ea)
    else:
        mpsnr = float(np.mean(finite)) if finite else float("inf")
    return MetricReport(mpsnr, float(np.mean(ssims)), psnrs, ssims)
