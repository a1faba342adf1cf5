"""
Image Metrics for Iso-Dream Lab
PSNR with a zero-error cap, windowed SSIM, and mask IoU
"""

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_unit_float(image) -> np.ndarray:
    return np.asarray(image, dtype=np.float64)


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images give PSNR_CAP"""
    a, b = _as_unit_float(a), _as_unit_float(b)
    if a.shape != b.shape:
        raise ValueError(f"Shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _grayscale(image: np.ndarray) -> np.ndarray:
    if image.ndim == 3 and image.shape[-1] == 3:
        return image.mean(axis=-1)
    if image.ndim == 2:
        return image
    raise ValueError(f"Expected (H, W) or (H, W, 3) image, got {image.shape}")


def ssim(a, b, window: int = SSIM_WINDOW, stride: int = SSIM_STRIDE) -> float:
    """
    Mean local SSIM over window x window patches taken every `stride` pixels

    Channels are averaged to grayscale first; images are expected in [0, 1].
    """
    a, b = _as_unit_float(a), _as_unit_float(b)
    if a.shape != b.shape:
        raise ValueError(f"Shape mismatch: {a.shape} vs {b.shape}")
    gray_a, gray_b = _grayscale(a), _grayscale(b)
    if min(gray_a.shape) < window:
        raise ValueError(f"Image {gray_a.shape} is smaller than the {window}x{window} SSIM window")

    patches_a = sliding_window_view(gray_a, (window, window))[::stride, ::stride]
    patches_b = sliding_window_view(gray_b, (window, window))[::stride, ::stride]
    mu_a = patches_a.mean(axis=(-2, -1))
    mu_b = patches_b.mean(axis=(-2, -1))
    var_a = patches_a.var(axis=(-2, -1))
    var_b = patches_b.var(axis=(-2, -1))
    cov = ((patches_a - mu_a[..., None, None]) * (patches_b - mu_b[..., None, None])).mean(axis=(-2, -1))

    numerator = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(numerator / denominator))


def mask_iou(pred, gt) -> float:
    """IoU of (pred > 0.5) against a binary ground truth; 1 when both are empty"""
    pred_set = np.asarray(pred) > 0.5
    gt_set = np.asarray(gt).astype(bool)
    if pred_set.shape != gt_set.shape:
        raise ValueError(f"Shape mismatch: {pred_set.shape} vs {gt_set.shape}")
    union = np.logical_or(pred_set, gt_set).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred_set, gt_set).sum() / union)
