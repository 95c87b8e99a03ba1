"""PSNR and SSIM on images stored in [-1, 1]."""

from __future__ import annotations

import numpy as np

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_STRIDE = 4
C1 = 0.01**2
C2 = 0.03**2


def _unit(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return (np.asarray(data, dtype=np.float64) + 1.0) / 2.0


def _check(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB after mapping [-1, 1] to [0, 1]."""
    a, b = _unit(a), _unit(b)
    _check(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def _gray(x: np.ndarray) -> np.ndarray:
    # accepts [H,W], [C,H,W]; channels averaged
    if x.ndim == 2:
        return x
    if x.ndim == 3:
        return x.mean(axis=0)
    raise ValueError(f"expected a single [C,H,W] or [H,W] image, got shape {x.shape}")


def ssim(a, b) -> float:
    """Mean SSIM over 8x8 uniform windows placed with stride 4."""
    a, b = _unit(a), _unit(b)
    _check(a, b)
    ga, gb = _gray(a), _gray(b)
    h, w = ga.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {ga.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    wa = np.lib.stride_tricks.sliding_window_view(ga, (SSIM_WINDOW, SSIM_WINDOW))[::SSIM_STRIDE, ::SSIM_STRIDE]
    wb = np.lib.stride_tricks.sliding_window_view(gb, (SSIM_WINDOW, SSIM_WINDOW))[::SSIM_STRIDE, ::SSIM_STRIDE]
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = ((wa - mu_a[..., None, None]) ** 2).mean(axis=(-2, -1))
    var_b = ((wb - mu_b[..., None, None]) ** 2).mean(axis=(-2, -1))
    cov = ((wa - mu_a[..., None, None]) * (wb - mu_b[..., None, None])).mean(axis=(-2, -1))
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))
