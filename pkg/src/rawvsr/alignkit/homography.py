"""Robust homography estimation (normalized DLT inside a consensus loop)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import EstimationError
from .warp import Homography, apply_homography

logger = logging.getLogger(__name__)


@dataclass
class Correspondences:
    """Matched point pairs: ``src[i]`` in image A corresponds to ``dst[i]`` in image B."""

    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.float64).reshape(-1, 2)
        self.dst = np.asarray(self.dst, dtype=np.float64).reshape(-1, 2)
        if self.src.shape != self.dst.shape:
            raise ValueError(f"point sets differ in size: {self.src.shape} vs {self.dst.shape}")

    def __len__(self):
        return len(self.src)


def _normalizer(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / dist if dist > 0 else 1.0
    return np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1.0]])


def fit_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares homography from >= 4 pairs with Hartley normalization."""
    t_src, t_dst = _normalizer(src), _normalizer(dst)
    ps = apply_homography(t_src, src)
    pd = apply_homography(t_dst, dst)
    n = len(ps)
    a = np.zeros((2 * n, 9))
    x, y = ps[:, 0], ps[:, 1]
    u, v = pd[:, 0], pd[:, 1]
    a[0::2, 0:3] = np.stack([-x, -y, -np.ones(n)], axis=1)
    a[0::2, 6:9] = np.stack([u * x, u * y, u], axis=1)
    a[1::2, 3:6] = np.stack([-x, -y, -np.ones(n)], axis=1)
    a[1::2, 6:9] = np.stack([v * x, v * y, v], axis=1)
    _, _, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    if abs(h[2, 2]) < 1e-15:
        raise EstimationError("degenerate homography fit")
    return h / h[2, 2]


def reprojection_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.sqrt(((apply_homography(h, src) - dst) ** 2).sum(axis=1))
    return np.where(np.isfinite(err), err, np.inf)


def _degenerate(pts: np.ndarray, tol: float = 1e-6) -> bool:
    """True if any three of the four points are (nearly) collinear."""
    scale = max(np.ptp(pts, axis=0).max(), 1e-12)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        d1, d2 = pts[j] - pts[i], pts[k] - pts[i]
        if abs(d1[0] * d2[1] - d1[1] * d2[0]) < tol * scale ** 2:
            return True
    return False


def estimate_homography(pairs, threshold: float = 1.5, iters: int = 2000, seed: int = 0,
                        confidence: float = 0.999):
    """Fit a homography mapping ``pairs.src`` onto ``pairs.dst`` robustly.

    Minimal 4-point samples are drawn from a seeded generator; the largest
    consensus set is refit with the normalized DLT until the inlier set is
    stable.

    Args:
        pairs: :class:`Correspondences` or ``(src, dst)`` tuple of (N, 2) arrays.
        threshold: inlier reprojection threshold in pixels.
        iters: maximum number of minimal samples.
        seed: sampler seed.
        confidence: early-termination confidence for the adaptive sample count.

    Returns:
        tuple: ``(Homography, inlier_mask)``.

    Raises:
        EstimationError: fewer than 4 pairs or no non-degenerate sample.
    """
    if not isinstance(pairs, Correspondences):
        pairs = Correspondences(*pairs)
    src, dst = pairs.src, pairs.dst
    n = len(src)
    if n < 4:
        raise EstimationError(f"need at least 4 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best_mask, best_cost, best_h = None, np.inf, None
    needed = iters
    it = 0
    while it < min(iters, needed):
        it += 1
        idx = rng.choice(n, 4, replace=False) if n > 4 else np.arange(4)
        if _degenerate(src[idx]) or _degenerate(dst[idx]):
            continue
        try:
            h = fit_dlt(src[idx], dst[idx])
        except (EstimationError, np.linalg.LinAlgError):
            continue
        err = reprojection_error(h, src, dst)
        mask = err <= threshold
        count = int(mask.sum())
        cost = float(np.minimum(err, threshold).sum())
        if best_mask is None or count > best_mask.sum() or (count == best_mask.sum() and cost < best_cost):
            best_mask, best_cost, best_h = mask, cost, h
            w = count / n
            if w >= 1.0:
                needed = it
            elif w > 0:
                needed = int(np.ceil(np.log(1 - confidence) / np.log(1 - w ** 4)))
        if n == 4:
            break
    if best_mask is None or best_mask.sum() < 4:
        raise EstimationError("no non-degenerate minimal sample produced a consensus set")
    h, mask = best_h, best_mask
    for _ in range(10):
        h_new = fit_dlt(src[mask], dst[mask])
        new_mask = reprojection_error(h_new, src, dst) <= threshold
        if new_mask.sum() < 4:
            break
        h = h_new
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    mask = reprojection_error(h, src, dst) <= threshold
    logger.debug("homography: %d/%d inliers after %d samples", mask.sum(), n, it)
    return Homography(h), mask
