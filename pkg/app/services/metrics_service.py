"""This module defines image and geometry metrics: PSNR, SSIM, chamfer distance and high-frequency energy."""
import logging
import math
from typing import Optional, Tuple
import faiss
import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from app.core.gaussians import GaussianCloud

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"Images must have equal shapes, got {tuple(a.shape)} and {tuple(b.shape)}.")


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """Peak signal-to-noise ratio of [0, 1] images, capped at 99 dB."""
    _check_pair(a, b)
    mse = float(((a.to(torch.float64) - b.to(torch.float64)) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(dtype: torch.dtype) -> torch.Tensor:
    coords = torch.arange(SSIM_WINDOW, dtype=torch.float64) - (SSIM_WINDOW - 1) / 2.0
    kernel = torch.exp(-(coords ** 2) / (2.0 * SSIM_SIGMA ** 2))
    kernel = kernel / kernel.sum()
    return torch.outer(kernel, kernel).to(dtype)


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    """
    Mean structural similarity of (H, W) or (H, W, C) images in [0, 1].
    Uses an 11x11 Gaussian window (sigma 1.5) over valid positions only.
    """
    _check_pair(a, b)
    x = a.to(torch.float64)
    y = b.to(torch.float64)
    if x.dim() == 2:
        x, y = x.unsqueeze(-1), y.unsqueeze(-1)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels.")
    channels = x.shape[-1]
    x = x.permute(2, 0, 1).unsqueeze(0)
    y = y.permute(2, 0, 1).unsqueeze(0)
    window = _gaussian_window(torch.float64).expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW)

    def blur(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(t, window, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    sigma_x = blur(x * x) - mu_x ** 2
    sigma_y = blur(y * y) - mu_y ** 2
    sigma_xy = blur(x * y) - mu_x * mu_y
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    numerator = (2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)
    denominator = (mu_x ** 2 + mu_y ** 2 + c1) * (sigma_x + sigma_y + c2)
    return float((numerator / denominator).mean())


def cloud_centers(cloud: GaussianCloud, opacity_threshold: float = 0.05) -> np.ndarray:
    """Positions of Gaussians whose opacity exceeds the threshold, as float32 (K, 3)."""
    keep = cloud.opacities.detach() > opacity_threshold
    return cloud.positions.detach()[keep].cpu().to(torch.float32).numpy()


def _nearest_distances(database: np.ndarray, queries: np.ndarray) -> np.ndarray:
    index = faiss.IndexFlatL2(3)
    index.add(np.ascontiguousarray(database, dtype=np.float32))
    squared, _ = index.search(np.ascontiguousarray(queries, dtype=np.float32), 1)
    return np.sqrt(np.maximum(squared[:, 0].astype(np.float64), 0.0))


def chamfer(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """
    Mean bidirectional nearest-neighbour distance, 0.5 * (mean a->b + mean b->a).
    Raises:
        ValueError: If either point set is empty.
    """
    if len(points_a) == 0 or len(points_b) == 0:
        raise ValueError("Chamfer distance needs two non-empty point sets.")
    forward = _nearest_distances(points_b, points_a).mean()
    backward = _nearest_distances(points_a, points_b).mean()
    return float(0.5 * (forward + backward))


def cloud_chamfer(a: GaussianCloud, b: GaussianCloud, opacity_threshold: float = 0.05) -> float:
    return chamfer(cloud_centers(a, opacity_threshold), cloud_centers(b, opacity_threshold))


def high_frequency_energy(image: torch.Tensor, crop: Optional[Tuple[int, int, int, int]] = None) -> float:
    """
    Mean squared Laplacian of the grayscale image.
    Args:
        image: (H, W, C) image in [0, 1].
        crop: Optional (row0, row1, col0, col1) window evaluated after filtering.
    """
    rgb = image[..., :3].detach().cpu().to(torch.float64).numpy()
    gray = rgb @ np.array([0.299, 0.587, 0.114])
    laplacian = ndimage.laplace(gray, mode="nearest")
    if crop is not None:
        r0, r1, c0, c1 = crop
        laplacian = laplacian[r0:r1, c0:c1]
    return float(np.mean(laplacian ** 2))
