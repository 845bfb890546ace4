"""
Quality Metrics - PSNR, SSIM and depth accuracy.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 1.0


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 * log10(1 / MSE) for images in [0, 1]; inf when they are identical."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(DYNAMIC_RANGE**2 / mse))


def to_luma(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image[..., :3] @ np.asarray(LUMA_WEIGHTS)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Single-scale SSIM on luma, mean over every fully-covered 11x11 window.

    Raises:
        ValueError: shapes differ or an image is smaller than the window
    """
    a, b = _check_pair(a, b)
    x = torch.from_numpy(to_luma(a))[None, None]
    y = torch.from_numpy(to_luma(b))[None, None]
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {tuple(x.shape[-2:])}")

    window = gaussian_window()[None, None]
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2

    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    var_x = F.conv2d(x * x, window) - mu_x**2
    var_y = F.conv2d(y * y, window) - mu_y**2
    cov = F.conv2d(x * y, window) - mu_x * mu_y

    numerator = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    denominator = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float((numerator / denominator).mean())


@dataclass(frozen=True)
class DepthMetrics:
    abs_err: float
    accuracy: float
    valid: int


def depth_metrics(
    predicted: np.ndarray,
    oracle: np.ndarray,
    threshold: float,
    mask: np.ndarray | None = None,
) -> DepthMetrics:
    """
    Mean |pred - gt| and the fraction under `threshold`, over valid pixels.

    A pixel is valid when both depths are finite (and `mask` is set, if given).

    Raises:
        ValueError: shapes differ or no pixel is valid
    """
    predicted, oracle = _check_pair(predicted, oracle)
    valid = np.isfinite(predicted) & np.isfinite(oracle)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise ValueError("no valid depth pixels to compare")
    error = np.abs(predicted[valid] - oracle[valid])
    return DepthMetrics(abs_err=float(error.mean()), accuracy=float((error < threshold).mean()), valid=count)
