"""Reconstruction losses: MSE, windowed SSIM, and their image-space gradients.

SSIM follows the standard 11x11 Gaussian window (sigma 1.5), C1=0.01^2,
C2=0.03^2 on [0,1] data, evaluated on all fully-contained ("valid") window
positions and averaged over windows and channels.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


class LossError(ValueError):
    pass


def _check_pair(a, b, min_side=1):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LossError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise LossError(f"expected HxWx3 images, got {a.shape}")
    if min(a.shape[0], a.shape[1]) < min_side:
        raise LossError(f"image too small for an {min_side}x{min_side} window: {a.shape}")
    return a, b


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def mse_grad(a, b) -> np.ndarray:
    """d mse / d a."""
    a, b = _check_pair(a, b)
    return 2.0 * (a - b) / a.size


def _ssim_terms(x, y, win):
    mx = fftconvolve(x, win, mode="valid")
    my = fftconvolve(y, win, mode="valid")
    x2 = fftconvolve(x * x, win, mode="valid")
    y2 = fftconvolve(y * y, win, mode="valid")
    xy = fftconvolve(x * y, win, mode="valid")
    sx = x2 - mx * mx
    sy = y2 - my * my
    sxy = xy - mx * my
    a1 = 2 * mx * my + C1
    a2 = 2 * sxy + C2
    b1 = mx * mx + my * my + C1
    b2 = sx + sy + C2
    return mx, my, a1, a2, b1, b2


def ssim(a, b) -> float:
    """Mean SSIM over valid window positions and channels; 1.0 for identical images."""
    a, b = _check_pair(a, b, min_side=WINDOW_SIZE)
    win = gaussian_window()
    total = 0.0
    for ch in range(3):
        _, _, a1, a2, b1, b2 = _ssim_terms(a[:, :, ch], b[:, :, ch], win)
        total += float(np.mean(a1 * a2 / (b1 * b2)))
    return total / 3.0


def ssim_grad(a, b) -> np.ndarray:
    """d ssim(a, b) / d a (analytic, window-accurate)."""
    a, b = _check_pair(a, b, min_side=WINDOW_SIZE)
    win = gaussian_window()
    grad = np.zeros_like(a)
    nw = (a.shape[0] - WINDOW_SIZE + 1) * (a.shape[1] - WINDOW_SIZE + 1)
    for ch in range(3):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my, a1, a2, b1, b2 = _ssim_terms(x, y, win)
        s = a1 * a2 / (b1 * b2)
        ds_da1 = a2 / (b1 * b2)
        ds_da2 = a1 / (b1 * b2)
        ds_db1 = -s / b1
        ds_db2 = -s / b2
        # S as a function of (mu_x, V(x^2), V(xy)); sigma terms expand through them
        g_mu = 2 * my * ds_da1 - 2 * my * ds_da2 + 2 * mx * ds_db1 - 2 * mx * ds_db2
        g_p = ds_db2
        g_q = 2 * ds_da2
        back = (
            fftconvolve(g_mu, win, mode="full")
            + 2 * x * fftconvolve(g_p, win, mode="full")
            + y * fftconvolve(g_q, win, mode="full")
        )
        grad[:, :, ch] = back / (3.0 * nw)
    return grad


def recon_loss(rendered, reference, alpha: float) -> float:
    """alpha * MSE + (1 - alpha) * (1 - SSIM); 0 for identical images."""
    if alpha >= 1.0:
        return alpha * mse(rendered, reference)
    return alpha * mse(rendered, reference) + (1.0 - alpha) * (1.0 - ssim(rendered, reference))


def recon_loss_grad(rendered, reference, alpha: float) -> np.ndarray:
    """d recon_loss / d rendered."""
    g = alpha * mse_grad(rendered, reference)
    if alpha < 1.0:
        g = g - (1.0 - alpha) * ssim_grad(rendered, reference)
    return g
