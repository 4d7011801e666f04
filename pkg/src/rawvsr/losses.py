"""Color-corrected training objective.

Per-channel least-squares gains (or a 3x3 matrix for the ablation) are fitted
between the LR sRGB frame and the bicubic-downsampled ground truth, applied to
the network output, and the result is scored with a Charbonnier penalty. The
fit is treated as a constant: no gradient flows through it.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
import torch

from .resize import imresize

logger = logging.getLogger(__name__)

GAIN_EPS = 1e-8
CHARBONNIER_EPS = 1e-6


class DegenerateFitWarning(UserWarning):
    pass


def fit_channel_gain(lr, gt) -> float:
    """Closed-form minimizer of ``||alpha * lr - gt||^2`` for one channel.

    Args:
        lr: LR channel samples, any shape.
        gt: matching downsampled ground-truth samples.

    Returns:
        float: ``sum(lr * gt) / (sum(lr ** 2) + 1e-8)``; 0 with a warning for all-zero ``lr``.
    """
    lr = np.asarray(lr, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if lr.shape != gt.shape or lr.size == 0:
        raise ValueError(f"need equal non-empty inputs, got {lr.shape} and {gt.shape}")
    den = float(np.dot(lr, lr))
    if den == 0.0:
        warnings.warn("all-zero LR channel; gain set to 0", DegenerateFitWarning, stacklevel=2)
        return 0.0
    return float(np.dot(lr, gt) / (den + GAIN_EPS))


def fit_gains(lr_rgb, gt_down_rgb) -> np.ndarray:
    """Per-channel gains for (3, h, w) arrays."""
    lr_rgb = np.asarray(lr_rgb)
    gt_down_rgb = np.asarray(gt_down_rgb)
    if lr_rgb.shape != gt_down_rgb.shape or lr_rgb.shape[0] != 3:
        raise ValueError(f"expected matching (3, h, w) frames, got {lr_rgb.shape} and {gt_down_rgb.shape}")
    return np.array([fit_channel_gain(lr_rgb[c], gt_down_rgb[c]) for c in range(3)])


def fit_gains_torch(lr_rgb: torch.Tensor, gt_down_rgb: torch.Tensor) -> torch.Tensor:
    """Batched per-channel gains for (B, 3, h, w) tensors, detached from the graph."""
    lr = lr_rgb.detach().flatten(2)
    gt = gt_down_rgb.detach().flatten(2)
    den = (lr * lr).sum(-1)
    if bool((den == 0).any()):
        warnings.warn("all-zero LR channel; gain set to 0", DegenerateFitWarning, stacklevel=2)
    return (lr * gt).sum(-1) / (den + GAIN_EPS)


def apply_color_correction(output, gains):
    """Scale each RGB channel of ``output`` by its gain.

    Works on (3, H, W) arrays with a length-3 gain vector or (B, 3, H, W)
    tensors with (B, 3) gains.
    """
    if isinstance(output, torch.Tensor):
        gains = torch.as_tensor(gains, dtype=output.dtype, device=output.device)
        if output.dim() == 4:
            return output * gains.reshape(output.shape[0], 3, 1, 1)
        return output * gains.reshape(3, 1, 1)
    return np.asarray(output) * np.asarray(gains, dtype=np.float64).reshape(3, 1, 1)


def fit_ccm(lr_pixels, gt_pixels) -> np.ndarray:
    """Least-squares 3x3 matrix ``M`` minimizing ``||lr @ M.T - gt||_F``.

    Args:
        lr_pixels: (n, 3) samples, n >= 3.
        gt_pixels: (n, 3) targets.
    """
    lr = np.asarray(lr_pixels, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_pixels, dtype=np.float64).reshape(-1, 3)
    if lr.shape != gt.shape:
        raise ValueError(f"pixel sets differ: {lr.shape} vs {gt.shape}")
    if len(lr) < 3:
        raise ValueError("need at least 3 pixels to fit a color matrix")
    gram = lr.T @ lr
    if np.linalg.matrix_rank(gram) < 3:
        warnings.warn("rank-deficient color fit; using pseudo-inverse", DegenerateFitWarning, stacklevel=2)
        return (np.linalg.pinv(lr) @ gt).T
    return np.linalg.solve(gram, lr.T @ gt).T


def fit_ccm_torch(lr_rgb: torch.Tensor, gt_down_rgb: torch.Tensor) -> torch.Tensor:
    """Batched color matrices (B, 3, 3) for (B, 3, h, w) inputs, detached."""
    mats = []
    for lr, gt in zip(lr_rgb.detach().double(), gt_down_rgb.detach().double()):
        m = fit_ccm(lr.flatten(1).T.cpu().numpy(), gt.flatten(1).T.cpu().numpy())
        mats.append(torch.from_numpy(m))
    return torch.stack(mats).to(lr_rgb.dtype).to(lr_rgb.device)


def apply_ccm(output, matrix):
    """Apply a color matrix to (3, H, W) arrays or batched (B, 3, H, W) tensors."""
    if isinstance(output, torch.Tensor):
        if output.dim() == 4:
            return torch.einsum("bij,bjhw->bihw", matrix.to(output.dtype), output)
        return torch.einsum("ij,jhw->ihw", torch.as_tensor(matrix, dtype=output.dtype), output)
    return np.einsum("ij,jhw->ihw", np.asarray(matrix), np.asarray(output))


def charbonnier(pred, target, eps: float = CHARBONNIER_EPS):
    """Mean over elements of ``sqrt(d^2 + eps)``."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    d = pred - target
    if isinstance(d, torch.Tensor):
        return torch.sqrt(d * d + eps).mean()
    return float(np.sqrt(np.asarray(d, dtype=np.float64) ** 2 + eps).mean())


def corrected_loss(output: torch.Tensor, gt: torch.Tensor, lr_rgb: torch.Tensor, mode: str = "channel"):
    """Color-corrected Charbonnier loss for a batch.

    Args:
        output: (B, 3, sH, sW) network output.
        gt: (B, 3, sH, sW) ground truth.
        lr_rgb: (B, 3, H, W) LR sRGB frames used to fit the correction.
        mode: ``channel`` (per-channel gains), ``matrix`` or ``none``.

    Returns:
        tuple: ``(loss, uncorrected_loss)``.
    """
    plain = charbonnier(output, gt)
    if mode == "none":
        return plain, plain
    gt_down = imresize(gt.detach(), lr_rgb.shape[-2:])
    if mode == "channel":
        # the output inherits the LR colors; the gains map them onto the GT colors
        corrected = apply_color_correction(output, fit_gains_torch(lr_rgb, gt_down))
    elif mode == "matrix":
        corrected = apply_ccm(output, fit_ccm_torch(lr_rgb, gt_down))
    else:
        raise ValueError(f"unknown color correction mode {mode!r}")
    return charbonnier(corrected, gt), plain
