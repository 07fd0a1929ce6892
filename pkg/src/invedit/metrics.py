"""Image quality metrics: mean absolute error and SSIM.

SSIM follows the standard recipe: 11x11 Gaussian window with sigma 1.5,
stabilizers C1 = 0.01^2 and C2 = 0.03^2 on a [0, 1] intensity scale,
windows taken in 'valid' mode (only fully inside the image), averaged over
positions and channels.  Inputs use the package-wide [-1, 1] convention and
are remapped internally.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ValidationError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _check_pair(x: torch.Tensor, y: torch.Tensor):
    if x.shape != y.shape:
        raise ValidationError(f"image shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")


def mae(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean absolute pixel error on the native [-1, 1] scale."""
    _check_pair(x, y)
    return (x - y).abs().mean()


def _gaussian_window(dtype, device) -> torch.Tensor:
    half = (SSIM_WINDOW - 1) / 2.0
    coords = torch.arange(SSIM_WINDOW, dtype=dtype, device=device) - half
    g = torch.exp(-(coords ** 2) / (2.0 * SSIM_SIGMA ** 2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean local SSIM between two images (CHW or BCHW, [-1, 1] scale)."""
    _check_pair(x, y)
    squeeze = x.dim() == 3
    if squeeze:
        x, y = x[None], y[None]
    if x.dim() != 4:
        raise ValidationError(f"expected CHW or BCHW images, got {x.dim()} dims")
    if x.shape[-1] < SSIM_WINDOW or x.shape[-2] < SSIM_WINDOW:
        raise ValidationError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")

    x = (x + 1.0) / 2.0
    y = (y + 1.0) / 2.0
    c = x.shape[1]
    win = _gaussian_window(x.dtype, x.device).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)

    def wmean(t):
        return F.conv2d(t, win, groups=c)

    mu_x = wmean(x)
    mu_y = wmean(y)
    var_x = wmean(x * x) - mu_x ** 2
    var_y = wmean(y * y) - mu_y ** 2
    cov = wmean(x * y) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return (num / den).mean()
