"""Full-reference image quality metrics on RGB frames in [0, 1]."""

from __future__ import annotations

import math

import numpy as np
from skimage.metrics import structural_similarity

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _as_array(img) -> np.ndarray:
    data = getattr(img, "data", img)
    if hasattr(data, "detach"):
        data = data.detach().cpu().numpy()
    return np.asarray(data, dtype=np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for peak value 1; ``inf`` when the inputs are equal."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a, b, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5) averaged over channels and valid pixels.

    Args:
        a, b: (H, W) or (C, H, W) images.
        data_range: dynamic range of the values.
    """
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if np.array_equal(a, b):
        return 1.0
    return float(structural_similarity(a, b, channel_axis=0, gaussian_weights=True, sigma=SSIM_SIGMA,
                                       use_sample_covariance=True, data_range=data_range, K1=k1, K2=k2))
