"""PSNR and SSIM, plus the differentiable SSIM used inside the rendering loss."""

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidParameterError

PSNR_CAP = 100.0
WINDOW = 11
SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _gaussian_window(size=WINDOW, sigma=SIGMA):
    x = np.arange(size) - size // 2
    w = np.exp(-x ** 2 / (2 * sigma ** 2))
    return w / w.sum()


_WIN = _gaussian_window()


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidParameterError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1], capped at 100."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def _blur(x, valid):
    """Separable Gaussian blur over the first two axes."""
    if valid:
        r = WINDOW // 2
        y = correlate1d(x, _WIN, axis=0, mode="constant")[r:-r]
        return correlate1d(y, _WIN, axis=1, mode="constant")[:, r:-r]
    y = correlate1d(x, _WIN, axis=0, mode="constant")
    return correlate1d(y, _WIN, axis=1, mode="constant")


def _ssim_terms(x, y, valid):
    mx, my = _blur(x, valid), _blur(y, valid)
    sxx = _blur(x * x, valid) - mx * mx
    syy = _blur(y * y, valid) - my * my
    sxy = _blur(x * y, valid) - mx * my
    num1 = 2 * mx * my + C1
    num2 = 2 * sxy + C2
    den1 = mx * mx + my * my + C1
    den2 = sxx + syy + C2
    return mx, my, num1, num2, den1, den2


def ssim(a, b) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Color images are first reduced to gray by channel mean; only windows lying
    fully inside the image are scored.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 3:
        a, b = a.mean(axis=2), b.mean(axis=2)
    if a.shape[0] < WINDOW or a.shape[1] < WINDOW:
        raise InvalidParameterError(f"images smaller than the {WINDOW}x{WINDOW} window")
    _, _, n1, n2, d1, d2 = _ssim_terms(a, b, valid=True)
    return float(np.mean((n1 * n2) / (d1 * d2)))


def ssim_loss_map(pred, gt):
    """Differentiable SSIM on zero-padded windows, per channel.

    Returns ``(mean_ssim, grad)`` with grad = d(mean_ssim)/d(pred).
    """
    pred, gt = _check_pair(pred, gt)
    mx, my, n1, n2, d1, d2 = _ssim_terms(pred, gt, valid=False)
    smap = (n1 * n2) / (d1 * d2)
    npix = smap.size
    # partials of S = n1 n2 / (d1 d2) w.r.t. mu_x, sigma_xx, sigma_xy
    dS_dmx = (2 * my * n2) / (d1 * d2) - smap * (2 * mx) / d1
    dS_dsxx = -smap / d2
    dS_dsxy = (2 * n1) / (d1 * d2)
    A = (dS_dmx - 2 * mx * dS_dsxx - my * dS_dsxy) / npix
    B = dS_dsxx / npix
    Cm = dS_dsxy / npix
    # the zero-padded symmetric blur is self-adjoint
    grad = _blur(A, False) + 2 * pred * _blur(B, False) + gt * _blur(Cm, False)
    return float(smap.mean()), grad
