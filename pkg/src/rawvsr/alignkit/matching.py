"""Deterministic corner detection and patch matching.

Any callable ``matcher(img_a, img_b) -> Correspondences`` can replace
:func:`match_corners` in the alignment pipeline.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, sobel

from .homography import Correspondences


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    return img


def harris_corners(gray: np.ndarray, max_corners: int = 500, sigma: float = 1.5, k: float = 0.05,
                   border: int = 8, nms_size: int = 7, rel_threshold: float = 1e-4) -> np.ndarray:
    """Return up to ``max_corners`` (x, y) corner locations, strongest first."""
    ix = sobel(gray, axis=1, mode="reflect")
    iy = sobel(gray, axis=0, mode="reflect")
    sxx = gaussian_filter(ix * ix, sigma)
    syy = gaussian_filter(iy * iy, sigma)
    sxy = gaussian_filter(ix * iy, sigma)
    resp = sxx * syy - sxy ** 2 - k * (sxx + syy) ** 2
    peak = (resp == maximum_filter(resp, size=nms_size)) & (resp > rel_threshold * max(resp.max(), 1e-12))
    peak[:border] = peak[-border:] = False
    peak[:, :border] = peak[:, -border:] = False
    ys, xs = np.nonzero(peak)
    order = np.lexsort((xs, ys, -resp[ys, xs]))[:max_corners]
    ys, xs = ys[order], xs[order]
    return np.stack([xs + _vertex(resp[ys, xs - 1], resp[ys, xs], resp[ys, xs + 1]),
                     ys + _vertex(resp[ys - 1, xs], resp[ys, xs], resp[ys + 1, xs])], axis=1)


def _vertex(lo, mid, hi):
    # sub-pixel peak of a parabola through three samples
    den = lo - 2.0 * mid + hi
    safe = np.where(den < 0, den, -1.0)
    return np.where(den < 0, np.clip(0.5 * (lo - hi) / safe, -0.5, 0.5), 0.0)


def _descriptors(gray: np.ndarray, pts: np.ndarray, radius: int):
    h, w = gray.shape
    smooth = gaussian_filter(gray, 1.0)
    keep, desc = [], []
    for i, (x, y) in enumerate(np.rint(pts).astype(int)):
        if x - radius < 0 or y - radius < 0 or x + radius >= w or y + radius >= h:
            continue
        patch = smooth[y - radius:y + radius + 1, x - radius:x + radius + 1].ravel()
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm < 1e-8:
            continue
        keep.append(i)
        desc.append(patch / norm)
    if not desc:
        return np.zeros(0, dtype=int), np.zeros((0, (2 * radius + 1) ** 2))
    return np.asarray(keep), np.stack(desc)


def match_corners(img_a, img_b, max_corners: int = 500, patch_radius: int = 7,
                  min_score: float = 0.8, ratio: float = 0.95) -> Correspondences:
    """Match Harris corners by normalized cross-correlation with mutual consistency."""
    ga, gb = to_gray(img_a), to_gray(img_b)
    border = patch_radius + 1
    pa = harris_corners(ga, max_corners, border=border)
    pb = harris_corners(gb, max_corners, border=border)
    ka, da = _descriptors(ga, pa, patch_radius)
    kb, db = _descriptors(gb, pb, patch_radius)
    if len(da) == 0 or len(db) == 0:
        return Correspondences(np.zeros((0, 2)), np.zeros((0, 2)))
    score = da @ db.T
    best_b = score.argmax(axis=1)
    best_a = score.argmax(axis=0)
    src, dst = [], []
    for i, j in enumerate(best_b):
        if best_a[j] != i or score[i, j] < min_score:
            continue
        if score.shape[1] > 1:
            second = np.partition(score[i], -2)[-2]
            if second > ratio * score[i, j]:
                continue
        src.append(pa[ka[i]])
        dst.append(pb[kb[j]])
    return Correspondences(np.asarray(src).reshape(-1, 2), np.asarray(dst).reshape(-1, 2))
