"""Image-quality metrics: PSNR and SSIM (with the analytic SSIM gradient).

SSIM uses the canonical 11x11 Gaussian window (sigma 1.5, C1 = 0.01^2,
C2 = 0.03^2) over valid window positions, per channel, averaged. Images
smaller than the window are symmetrically padded first.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def psnr(pred: np.ndarray, target: np.ndarray, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"psnr shapes disagree: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-0.5 * (offsets / sigma) ** 2)
    return w / w.sum()


def _corr_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2D image."""
    tmp = sliding_window_view(img, kernel.size, axis=0) @ kernel
    return sliding_window_view(tmp, kernel.size, axis=1) @ kernel


def _corr_valid_adjoint(grad: np.ndarray, kernel: np.ndarray,
                        out_shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of `_corr_valid` (full convolution; kernel is symmetric)."""
    p = kernel.size - 1
    padded = np.zeros((grad.shape[0] + 2 * p, grad.shape[1] + 2 * p))
    padded[p : p + grad.shape[0], p : p + grad.shape[1]] = grad
    out = _corr_valid(padded, kernel)
    assert out.shape == out_shape
    return out


def _pad_indices(length: int, pad: int) -> np.ndarray:
    return np.pad(np.arange(length), pad, mode="symmetric")


def _ssim_channel(x: np.ndarray, y: np.ndarray, kernel: np.ndarray,
                  want_grad: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """SSIM map of one channel plus (optionally) d(sum map)/dx."""
    mu_x = _corr_valid(x, kernel)
    mu_y = _corr_valid(y, kernel)
    xx = _corr_valid(x * x, kernel) - mu_x * mu_x
    yy = _corr_valid(y * y, kernel) - mu_y * mu_y
    xy = _corr_valid(x * y, kernel) - mu_x * mu_y
    lum_num = 2.0 * mu_x * mu_y + SSIM_C1
    lum_den = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    str_num = 2.0 * xy + SSIM_C2
    str_den = xx + yy + SSIM_C2
    lum = lum_num / lum_den
    struc = str_num / str_den
    ssim_map = lum * struc
    if not want_grad:
        return ssim_map, None

    # d(sum map) w.r.t. the local statistics, then pull back through the window
    g_lum = struc
    g_struc = lum
    g_mu_x = g_lum * (2.0 * mu_y * lum_den - lum_num * 2.0 * mu_x) / lum_den**2
    g_xy = g_struc * 2.0 / str_den
    g_xx = -g_struc * str_num / str_den**2
    g_mu_x += -2.0 * mu_x * g_xx - mu_y * g_xy
    grad_x = _corr_valid_adjoint(g_mu_x, kernel, x.shape)
    grad_x += 2.0 * x * _corr_valid_adjoint(g_xx, kernel, x.shape)
    grad_x += y * _corr_valid_adjoint(g_xy, kernel, x.shape)
    return ssim_map, grad_x


def ssim_with_grad(pred: np.ndarray, target: np.ndarray,
                   want_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """Mean SSIM over channels; the gradient is w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"ssim shapes disagree: {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred = pred[..., None]
        target = target[..., None]
        squeeze = True
    elif pred.ndim == 3:
        squeeze = False
    else:
        raise ShapeError("ssim expects HxW or HxWxC images")

    h, w, channels = pred.shape
    kernel = _gaussian_window()
    pad = max(SSIM_WINDOW - min(h, w), 0)
    pad = (pad + 1) // 2  # pad both sides symmetrically until the window fits
    if pad:
        rows = _pad_indices(h, pad)
        cols = _pad_indices(w, pad)

    total = 0.0
    grad = np.zeros_like(pred) if want_grad else None
    for c in range(channels):
        x = pred[:, :, c]
        y = target[:, :, c]
        if pad:
            x = x[np.ix_(rows, cols)]
            y = y[np.ix_(rows, cols)]
        ssim_map, grad_x = _ssim_channel(x, y, kernel, want_grad)
        total += float(ssim_map.mean())
        if want_grad:
            grad_x = grad_x / ssim_map.size
            if pad:
                folded = np.zeros((h, w + 2 * pad))
                for r_src, r_pad in zip(rows, range(len(rows))):
                    folded[r_src] += grad_x[r_pad]
                col_fold = np.zeros((h, w))
                for c_src, c_pad in zip(cols, range(len(cols))):
                    col_fold[:, c_src] += folded[:, c_pad]
                grad[:, :, c] = col_fold
            else:
                grad[:, :, c] = grad_x
    value = total / channels
    if want_grad:
        grad /= channels
        if squeeze:
            grad = grad[..., 0]
    return value, grad


def ssim(pred: np.ndarray, target: np.ndarray) -> float:
    value, _ = ssim_with_grad(pred, target, want_grad=False)
    return value
