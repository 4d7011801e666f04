"""Dense correspondence by coarse-to-fine block matching."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import median_filter, uniform_filter

from .. import _native
from .warp import FlowField


def _as_chw(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[None] if img.ndim == 2 else img


def _halve(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[1] // 2 * 2, img.shape[2] // 2 * 2
    x = img[:, :h, :w]
    return 0.25 * (x[:, 0::2, 0::2] + x[:, 0::2, 1::2] + x[:, 1::2, 0::2] + x[:, 1::2, 1::2])


def _double_flow(flow: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # bilinear x2 (half-pixel centres), edge padded to odd target sizes
    h, w = shape
    fh, fw = flow.shape[1:]
    ys = np.clip((np.arange(h) + 0.5) / 2.0 - 0.5, 0, fh - 1)
    xs = np.clip((np.arange(w) + 0.5) / 2.0 - 0.5, 0, fw - 1)
    my, mx = np.meshgrid(ys, xs, indexing="ij")
    up, _ = _native.remap_bilinear(flow, mx, my, clamp_border=True)
    return 2.0 * up


def _confidence(img: np.ndarray, window: int, min_eig: float) -> np.ndarray:
    """True where the windowed structure tensor has both eigenvalues above ``min_eig`` per pixel."""
    gy, gx = np.gradient(img, axis=(1, 2))
    sxx = uniform_filter((gx * gx).sum(0), window, mode="nearest")
    syy = uniform_filter((gy * gy).sum(0), window, mode="nearest")
    sxy = uniform_filter((gx * gy).sum(0), window, mode="nearest")
    lam = 0.5 * (sxx + syy) - np.sqrt(0.25 * (sxx - syy) ** 2 + sxy ** 2)
    return lam > min_eig * img.shape[0]


def _lk_step(a: np.ndarray, b_w: np.ndarray, window: int) -> np.ndarray:
    """One Lucas-Kanade update ``d`` with ``a(p) ~= b_w(p + d)``, clipped to half a pixel."""
    # gradients of the average image keep the update symmetric in a and b
    gy, gx = np.gradient(0.5 * (a + b_w), axis=(1, 2))
    diff = b_w - a
    sxx = uniform_filter((gx * gx).sum(0), window, mode="nearest")
    syy = uniform_filter((gy * gy).sum(0), window, mode="nearest")
    sxy = uniform_filter((gx * gy).sum(0), window, mode="nearest")
    bx = -uniform_filter((gx * diff).sum(0), window, mode="nearest")
    by = -uniform_filter((gy * diff).sum(0), window, mode="nearest")
    det = sxx * syy - sxy * sxy
    ok = det > 1e-9 * np.maximum((sxx + syy) ** 2, 1e-12)
    safe = np.where(ok, det, 1.0)
    dx = np.where(ok, (syy * bx - sxy * by) / safe, 0.0)
    dy = np.where(ok, (sxx * by - sxy * bx) / safe, 0.0)
    return np.clip(np.stack([dx, dy]), -0.5, 0.5)


def dense_flow(a, b, radius: int = 3, block_radius: int = 3, min_size: int = 16,
               max_levels: int = 4, smooth: int = 3, lk_iters: int = 1, penalty: float = 0.0,
               min_eig: float = 2e-5,
               backend=None) -> FlowField:
    """Estimate ``f`` with ``a(p) ~= b(p + f(p))`` by multi-scale SSD block matching.

    At each pyramid level ``b`` is warped by the current estimate and an
    integer residual is searched within ``radius`` and then polished with a
    few Lucas-Kanade iterations (parabolic sub-pixel fitting is used instead
    when ``lk_iters == 0``). Ties prefer
    zero displacement, so textureless regions and identical inputs yield
    exactly zero flow.

    Args:
        a: target image, (H, W) or (C, H, W).
        b: source image of the same size.
        radius: search radius in pixels at every level.
        block_radius: half-size of the matching window.
        min_size: smallest side allowed at the coarsest level.
        max_levels: maximum pyramid depth.
        smooth: median-filter size applied to the residual at each level (0 disables).
        lk_iters: gradient-based refinement iterations per level.
        penalty: weight of a ``|d|^2`` prior added to the matching cost,
            relative to the mean gradient energy of the window.
        min_eig: minimum per-pixel structure-tensor eigenvalue for a location
            to update its estimate; weaker locations keep the coarser flow.
        backend: kernel back end override.
    """
    a, b = _as_chw(a), _as_chw(b)
    if a.shape != b.shape:
        raise ValueError(f"images differ in size: {a.shape} vs {b.shape}")
    pyr_a, pyr_b = [a], [b]
    while len(pyr_a) < max_levels and min(pyr_a[-1].shape[1:]) // 2 >= min_size:
        pyr_a.append(_halve(pyr_a[-1]))
        pyr_b.append(_halve(pyr_b[-1]))
    flow = np.zeros((2,) + pyr_a[-1].shape[1:])
    for level in range(len(pyr_a) - 1, -1, -1):
        la, lb = pyr_a[level], pyr_b[level]
        if flow.shape[1:] != la.shape[1:]:
            flow = _double_flow(flow, la.shape[1:])
        h, w = la.shape[1:]
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        if np.any(flow):
            lb, _ = _native.remap_bilinear(lb, xs + flow[0], ys + flow[1], clamp_border=True, backend=backend)
        gy, gx = np.gradient(la, axis=(1, 2))
        pen = penalty * (2 * block_radius + 1) ** 2 * float((gx * gx + gy * gy).sum(0).mean())
        resid, _ = _native.block_match(la, lb, radius, block_radius, pen, subpixel=lk_iters == 0,
                                       backend=backend)
        if smooth:
            resid = np.stack([median_filter(r, size=smooth, mode="nearest") for r in resid])
        window = 2 * block_radius + 1
        conf = _confidence(la, window, min_eig)
        flow = flow + resid * conf
        for _ in range(lk_iters):
            lb, _ = _native.remap_bilinear(pyr_b[level], xs + flow[0], ys + flow[1], clamp_border=True,
                                           backend=backend)
            # box-averaging the update approximates a window-constant displacement
            step = np.stack([uniform_filter(s, window, mode="nearest") for s in _lk_step(la, lb, window) * conf])
            flow = flow + step
    return FlowField(flow)
