"""PSNR and SSIM image quality metrics.

PSNR is computed over all channels jointly (single MSE); SSIM uses the
canonical 11x11 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, valid
windows only, averaged over channels.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate2d

from .errors import DimensionError, ValidationError
from .tensorops import as_image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_same_shape(a, b):
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    if not peak > 0:
        raise ValidationError(f"peak must be positive, got {peak}")
    a, b = _check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalized 2D Gaussian window used by SSIM."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_channel(a, b, peak):
    win = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = correlate2d(a, win, mode="valid")
    mu_b = correlate2d(b, win, mode="valid")
    e_aa = correlate2d(a * a, win, mode="valid")
    e_bb = correlate2d(b * b, win, mode="valid")
    e_ab = correlate2d(a * b, win, mode="valid")
    var_a = e_aa - mu_a ** 2
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak=1.0):
    """Mean local structural similarity, channels averaged."""
    a, b = _check_same_shape(a, b)
    h, w = a.shape[-2:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise DimensionError(
            f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    if a.ndim != 3:
        raise DimensionError(f"ssim expects a single image (C, H, W), got {a.shape}")
    vals = [_ssim_channel(a[c], b[c], peak) for c in range(a.shape[0])]
    return float(np.mean(vals))


@dataclass(frozen=True)
class MetricReport:
    """Joint metrics plus the per-channel breakdown as (psnr, ssim) pairs."""

    psnr_db: float
    ssim: float
    per_channel: tuple


def metric_report(a, b, peak=1.0):
    """PSNR/SSIM summary matching the reporting conventions of the tables."""
    a, b = _check_same_shape(a, b)
    per = tuple(
        (psnr(a[c:c + 1], b[c:c + 1], peak), _ssim_channel(a[c], b[c], peak))
        for c in range(a.shape[0]))
    return MetricReport(psnr(a, b, peak), ssim(a, b, peak), per)
