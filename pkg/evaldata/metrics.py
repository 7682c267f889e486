# File: evaldata/metrics.py

import math
from typing import Union

import torch
import torch.nn.functional as F

from codec.volumes import VideoClip
from errors import ShapeError

__all__ = ["PSNR_CAP", "psnr", "psnr_from_mse", "gaussian_window", "ssim"]

PSNR_CAP = 100.0
ClipLike = Union[VideoClip, torch.Tensor]


def _pair(a: ClipLike, b: ClipLike):
    a = a.values if isinstance(a, VideoClip) else a
    b = b.values if isinstance(b, VideoClip) else b
    if a.shape != b.shape:
        raise ShapeError(f"clip shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    # [-1, 1] -> [0, 1], peak 1
    return (a.double() + 1.0) / 2.0, (b.double() + 1.0) / 2.0


def psnr_from_mse(mse: float) -> float:
    if mse < 1e-10:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def psnr(a: ClipLike, b: ClipLike) -> float:
    ua, ub = _pair(a, b)
    return psnr_from_mse(torch.mean((ua - ub) ** 2).item())


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter(x: torch.Tensor, window: torch.Tensor) -> torch.Tensor:
    # separable valid filtering of (n, ch, h, w)
    ch = x.shape[1]
    size = window.numel()
    gx = window.view(1, 1, 1, size).repeat(ch, 1, 1, 1)
    gy = window.view(1, 1, size, 1).repeat(ch, 1, 1, 1)
    return F.conv2d(F.conv2d(x, gx, groups=ch), gy, groups=ch)


def ssim(
    a: ClipLike,
    b: ClipLike,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Mean SSIM over frames; Gaussian-weighted local statistics, valid positions only, channel-averaged."""
    ua, ub = _pair(a, b)
    if ua.dim() < 3:
        raise ShapeError(f"expected (..., H, W, C) frames, got {tuple(ua.shape)}")
    h, w, ch = ua.shape[-3:]
    if h < window_size or w < window_size:
        raise ShapeError(f"frames of {h}x{w} are smaller than the {window_size}x{window_size} window")
    x = ua.reshape(-1, h, w, ch).permute(0, 3, 1, 2)
    y = ub.reshape(-1, h, w, ch).permute(0, 3, 1, 2)
    window = gaussian_window(window_size, sigma)
    c1, c2 = k1 ** 2, k2 ** 2
    mu_x, mu_y = _filter(x, window), _filter(y, window)
    sxx = _filter(x * x, window) - mu_x ** 2
    syy = _filter(y * y, window) - mu_y ** 2
    sxy = _filter(x * y, window) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2))
    per_frame = ssim_map.mean(dim=(1, 2, 3))
    return per_frame.mean().item()
