"""Visual fidelity metrics on the 8-bit scale.

Images in [0, 1] are multiplied by 255 before every metric. SSIM uses an
11x11 Gaussian window (sigma 1.5) and UQI an 8x8 uniform window; both are
computed per channel over "valid" window positions (no padding) and averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PEAK = 255.0


@dataclass(frozen=True)
class FidelityReport:
    rmse: float
    psnr: float
    ssim: float
    uqi: float


def _pixels(img):
    return np.asarray(getattr(img, "pixels", img), dtype=np.float64) * PEAK


def _check(a, b):
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    return a, b


def rmse(a, b):
    a, b = _check(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b):
    """PSNR in dB; ``math.inf`` for identical images."""
    err = rmse(a, b)
    if err == 0.0:
        return math.inf
    return float(20.0 * np.log10(PEAK / err))


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _window_stats(a, b, window):
    """Weighted local means, variances and covariance at every valid position."""
    k = window.shape[0]
    va = sliding_window_view(a, (k, k), axis=(0, 1))
    vb = sliding_window_view(b, (k, k), axis=(0, 1))
    mu_a = np.einsum("ijcxy,xy->ijc", va, window)
    mu_b = np.einsum("ijcxy,xy->ijc", vb, window)
    var_a = np.einsum("ijcxy,xy->ijc", va * va, window) - mu_a**2
    var_b = np.einsum("ijcxy,xy->ijc", vb * vb, window) - mu_b**2
    cov = np.einsum("ijcxy,xy->ijc", va * vb, window) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    a, b = _check(a, b)
    if min(a.shape[:2]) < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} SSIM window")
    c1 = (k1 * PEAK) ** 2
    c2 = (k2 * PEAK) ** 2
    mu_a, mu_b, var_a, var_b, cov = _window_stats(a, b, gaussian_window(window_size, sigma))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def uqi(a, b, window_size=8):
    """Universal quality index; windows where the formula is 0/0 count as 1."""
    a, b = _check(a, b)
    if min(a.shape[:2]) < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} UQI window")
    window = np.full((window_size, window_size), 1.0 / window_size**2)
    mu_a, mu_b, var_a, var_b, cov = _window_stats(a, b, window)
    num = 4.0 * cov * mu_a * mu_b
    den = (var_a + var_b) * (mu_a**2 + mu_b**2)
    q = np.ones_like(num)
    nz = den != 0.0
    q[nz] = num[nz] / den[nz]
    return float(np.mean(q))


def fidelity(a, b):
    return FidelityReport(rmse(a, b), psnr(a, b), ssim(a, b), uqi(a, b))
