"""Coarse-to-fine LR-HR pair alignment.

The HR frame is registered onto the upsampled LR frame (global homography,
then dense flow) so the LR input stays untouched. Raw frames follow the same
transforms in the packed domain, which keeps the Bayer phase intact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import rawcore
from ..errors import DataError, EstimationError
from ..rawcore import RawBayerFrame
from ..resize import imresize
from .flow import dense_flow
from .homography import estimate_homography
from .matching import match_corners
from .warp import FlowField, Homography, rescale_for_subframe, warp_flow, warp_image

logger = logging.getLogger(__name__)


@dataclass
class AlignConfig:
    focal_ratio: float | None = None      # defaults to the scale factor
    ransac_threshold: float = 1.5
    ransac_iters: int = 2000
    seed: int = 0
    margin: int = 8                       # LR pixels, must be even
    size_multiple: int = 8                # LR crop sides are multiples of this
    min_coverage: float = 0.25
    min_inliers: int = 8
    raw_mode: str = "nearest"
    refine_flow: bool = True
    flow_radius: int = 3
    flow_block_radius: int = 4

    def __post_init__(self):
        if self.margin % 2:
            raise ValueError("margin must be even to keep the Bayer phase")
        if self.size_multiple % 2:
            raise ValueError("size_multiple must be even")


@dataclass
class AlignResult:
    lr_rgb: np.ndarray
    hr_rgb: np.ndarray
    lr_raw: RawBayerFrame | None
    hr_raw: RawBayerFrame | None
    homography: Homography
    flow: FlowField | None
    inlier_ratio: float
    n_matches: int
    coverage: float
    residual_median_px: float
    lr_box: tuple[int, int, int, int]     # x0, y0, w, h in LR pixels
    report: dict = field(default_factory=dict)


def _valid_box(valid_lr: np.ndarray) -> tuple[int, int, int, int]:
    """Shrink the bounding box of ``valid_lr`` until it holds only valid pixels."""
    ys, xs = np.nonzero(valid_lr)
    if len(xs) == 0:
        raise DataError("no overlap between LR and warped HR frames")
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    while y1 > y0 and x1 > x0:
        region = valid_lr[y0:y1, x0:x1]
        if region.all():
            break
        bad = {
            "top": (~region[0]).sum(), "bottom": (~region[-1]).sum(),
            "left": (~region[:, 0]).sum(), "right": (~region[:, -1]).sum(),
        }
        side = max(bad, key=bad.get)
        if side == "top":
            y0 += 1
        elif side == "bottom":
            y1 -= 1
        elif side == "left":
            x0 += 1
        else:
            x1 -= 1
    return int(x0), int(y0), int(x1 - x0), int(y1 - y0)


def _crop_box(box, margin: int, multiple: int):
    """Apply the centre margin and snap origin/extent to even/multiple sizes."""
    x0, y0, w, h = box
    x0, y0 = x0 + margin, y0 + margin
    w, h = w - 2 * margin, h - 2 * margin
    nx0, ny0 = x0 + x0 % 2, y0 + y0 % 2
    w, h = w - (nx0 - x0), h - (ny0 - y0)
    w, h = w - w % multiple, h - h % multiple
    if w <= 0 or h <= 0:
        raise DataError("aligned overlap is too small after cropping")
    return nx0, ny0, w, h


def _crop(img, x0, y0, w, h):
    return img[..., y0:y0 + h, x0:x0 + w]


def align_pair(lr_rgb, hr_rgb, lr_raw: RawBayerFrame | None = None, hr_raw: RawBayerFrame | None = None,
               scale: int = 2, cfg: AlignConfig | None = None,
               matcher: Callable | None = None, flow_fn: Callable | None = None) -> AlignResult:
    """Align an HR frame (and its raw mosaic) to an LR frame.

    Args:
        lr_rgb: (3, h, w) LR sRGB frame in [0, 1].
        hr_rgb: (3, H, W) HR sRGB frame.
        lr_raw: optional LR mosaic, only cropped.
        hr_raw: optional HR mosaic, transformed in the packed domain.
        scale: nominal magnification.
        cfg: alignment settings.
        matcher: ``matcher(a, b) -> Correspondences``; Harris/NCC by default.
        flow_fn: ``flow_fn(a, b) -> FlowField``; block matching by default.

    Returns:
        AlignResult with cropped, aligned frames and diagnostics.
    """
    cfg = cfg or AlignConfig()
    matcher = matcher or match_corners
    flow_fn = flow_fn or (lambda a, b: dense_flow(a, b, radius=cfg.flow_radius,
                                                  block_radius=cfg.flow_block_radius))
    ratio = cfg.focal_ratio or float(scale)
    lr_rgb = np.asarray(lr_rgb, dtype=np.float64)
    hr_rgb = np.asarray(hr_rgb, dtype=np.float64)
    h, w = lr_rgb.shape[1:]
    up_size = (int(round(h * ratio)), int(round(w * ratio)))
    if abs(hr_rgb.shape[1] / h - scale) > scale * 0.25:
        raise DataError(f"HR/LR size ratio {hr_rgb.shape[1] / h:.2f} inconsistent with scale {scale}")
    lr_up = np.clip(imresize(lr_rgb, up_size), 0.0, 1.0)

    # global: HR coordinates -> upsampled LR coordinates
    pairs = matcher(hr_rgb, lr_up)
    if len(pairs) < max(4, cfg.min_inliers):
        raise EstimationError(f"only {len(pairs)} keypoint matches")
    hom, inliers = estimate_homography(pairs, cfg.ransac_threshold, cfg.ransac_iters, cfg.seed)
    if inliers.sum() < cfg.min_inliers:
        raise EstimationError(f"only {int(inliers.sum())} RANSAC inliers")
    hr_warp, valid = warp_image(hr_rgb, hom, up_size)
    coverage = float(valid.mean())
    if coverage < cfg.min_coverage:
        raise DataError(f"overlap coverage {coverage:.2f} below {cfg.min_coverage}")

    # LR-pixel box (even origin) fully covered by the warped HR frame
    s_int = int(round(ratio))
    vh, vw = h * s_int, w * s_int
    valid_lr = valid[:vh, :vw].reshape(h, s_int, w, s_int).all(axis=(1, 3))
    bx, by, bw, bh = _valid_box(valid_lr)
    bx, by = bx + bx % 2, by + by % 2
    bw, bh = bw - bw % 2, bh - bh % 2
    hr_box = (bx * s_int, by * s_int, bw * s_int, bh * s_int)
    lr_up_c = _crop(lr_up, *hr_box)
    hr_c = _crop(hr_warp, *hr_box)

    # local: dense flow pulling the warped HR onto the upsampled LR
    flow = None
    if cfg.refine_flow:
        flow = flow_fn(lr_up_c, hr_c)
        hr_c, _ = warp_flow(hr_c, flow)

    cx, cy, cw, ch = _crop_box((0, 0, bw, bh), cfg.margin, cfg.size_multiple)
    lr_final_box = (bx + cx, by + cy, cw, ch)
    hr_inner = (cx * s_int, cy * s_int, cw * s_int, ch * s_int)
    lr_out = _crop(lr_rgb, *lr_final_box)
    hr_out = np.clip(_crop(hr_c, *hr_inner), 0.0, 1.0)

    resid = flow_fn(_crop(lr_up_c, *hr_inner), hr_out)
    residual = float(np.median(resid.magnitude()))

    lr_raw_out = hr_raw_out = None
    if lr_raw is not None:
        lr_raw_out = rawcore.crop_phase_safe(lr_raw, *lr_final_box)
    if hr_raw is not None:
        packed = rawcore.pack_bayer(hr_raw)
        planes = np.asarray(packed.planes, dtype=np.float64)
        half = rescale_for_subframe(hom)
        p, _ = warp_image(planes, half, (up_size[0] // 2, up_size[1] // 2), mode=cfg.raw_mode)
        p = _crop(p, *(v // 2 for v in hr_box))
        if flow is not None:
            p, _ = warp_flow(p, rescale_for_subframe(flow), mode=cfg.raw_mode)
        p = _crop(p, *(v // 2 for v in hr_inner))
        if np.issubdtype(packed.planes.dtype, np.integer):
            p = np.rint(p).astype(packed.planes.dtype)
        else:
            p = p.astype(packed.planes.dtype)
        hr_raw_out = rawcore.unpack_bayer(
            rawcore.PackedRawFrame(p, packed.phase, packed.bit_depth, packed.black_level,
                                   packed.white_level, packed.normalized))

    report = {
        "n_matches": len(pairs),
        "inlier_ratio": float(inliers.mean()),
        "coverage": coverage,
        "residual_median_px": residual,
        "homography": hom.matrix.tolist(),
        "lr_box": list(lr_final_box),
    }
    return AlignResult(lr_out.astype(np.float32), hr_out.astype(np.float32), lr_raw_out, hr_raw_out,
                       hom, flow, float(inliers.mean()), len(pairs), coverage, residual,
                       lr_final_box, report)
