"""Structural similarity between two images."""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

from ..errors import DataError

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    """Per-position SSIM of two single-channel images over the valid window positions."""
    w = gaussian_window()
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2

    def filt(x):
        return fftconvolve(x, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(img_a, img_b, data_range: float = 1.0) -> float:
    """Mean SSIM of two ``C x H x W`` (or ``H x W``) images, averaged over channels.

    Uses an 11 x 11 Gaussian window with sigma 1.5 and the usual constants
    ``(0.01 L)^2`` and ``(0.03 L)^2``; only window positions fully inside the
    image count.
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise DataError(f"expected C x H x W images, got shape {a.shape}")
    if min(a.shape[1:]) < WINDOW:
        raise DataError(f"images must be at least {WINDOW} x {WINDOW}, got {a.shape[1:]}")
    values = [ssim_map(a[c], b[c], data_range).mean() for c in range(a.shape[0])]
    return float(np.clip(np.mean(values), -1.0, 1.0))
