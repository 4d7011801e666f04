"""Pure numpy implementations of the compiled kernels.

The arithmetic follows ``_kernels.pyx`` operation by operation so that the
two back ends agree bit for bit.
"""

from __future__ import annotations

import numpy as np


def remap_bilinear(img, map_x, map_y, clamp_border=False):
    C, H, W = img.shape
    x = np.asarray(map_x, dtype=np.float64)
    y = np.asarray(map_y, dtype=np.float64)
    valid = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    if clamp_border:
        x = np.minimum(np.maximum(x, 0.0), W - 1.0)
        y = np.minimum(np.maximum(y, 0.0), H - 1.0)
        use = np.ones_like(valid)
    else:
        use = valid
        x = np.where(valid, x, 0.0)
        y = np.where(valid, y, 0.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    x1 = np.where(x0 + 1 < W, x0 + 1, W - 1)
    y1 = np.where(y0 + 1 < H, y0 + 1, H - 1)
    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx
    out = (w00 * img[:, y0, x0] + w01 * img[:, y0, x1]
           + w10 * img[:, y1, x0] + w11 * img[:, y1, x1])
    out = np.where(use[None], out, 0.0)
    return out, valid


def remap_nearest(img, map_x, map_y):
    C, H, W = img.shape
    xi = np.floor(np.asarray(map_x, dtype=np.float64) + 0.5).astype(np.int64)
    yi = np.floor(np.asarray(map_y, dtype=np.float64) + 0.5).astype(np.int64)
    valid = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
    out = img[:, np.clip(yi, 0, H - 1), np.clip(xi, 0, W - 1)]
    out = np.where(valid[None], out, 0.0)
    return out, valid


def _window_sums(diff, r):
    H, W = diff.shape
    pad = np.zeros((H + 2 * r, W + 2 * r))
    pad[r:r + H, r:r + W] = diff
    rows = np.zeros((H + 2 * r, W))
    for k in range(2 * r + 1):
        rows = rows + pad[:, k:k + W]
    rows[:r] = 0.0
    rows[r + H:] = 0.0
    out = np.zeros((H, W))
    for k in range(2 * r + 1):
        out = out + rows[k:k + H]
    return out


def block_match(a, b, radius, block_radius, penalty=0.0, subpixel=True):
    C, H, W = a.shape
    n = 2 * radius + 1
    cost = np.empty((n * n, H, W))
    rows = np.arange(H)
    cols = np.arange(W)
    for dy in range(-radius, radius + 1):
        yy = np.clip(rows + dy, 0, H - 1)
        for dx in range(-radius, radius + 1):
            xx = np.clip(cols + dx, 0, W - 1)
            shifted = b[:, yy][:, :, xx]
            d = a[0] - shifted[0]
            acc = d * d
            for c in range(1, C):
                d = a[c] - shifted[c]
                acc = acc + d * d
            cost[(dy + radius) * n + (dx + radius)] = _window_sums(acc, block_radius) + penalty * (dy * dy + dx * dx)
    return _select(cost, radius, subpixel)


def _select(cost, radius, subpixel=True):
    n = 2 * radius + 1
    _, H, W = cost.shape
    cb = cost[radius * n + radius].copy()
    bdy = np.zeros((H, W), dtype=np.int64)
    bdx = np.zeros((H, W), dtype=np.int64)
    bmag = np.zeros((H, W), dtype=np.int64)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            cv = cost[(dy + radius) * n + (dx + radius)]
            mag = dy * dy + dx * dx
            take = (cv < cb) | ((cv == cb) & (mag < bmag))
            cb = np.where(take, cv, cb)
            bdy = np.where(take, dy, bdy)
            bdx = np.where(take, dx, bdx)
            bmag = np.where(take, mag, bmag)
    kb = (bdy + radius) * n + (bdx + radius)

    def refine(offset, along):
        inner = (cb > 0) & (along > -radius) & (along < radius) & subpixel
        km = np.where(inner, kb - offset, kb)
        kp = np.where(inner, kb + offset, kb)
        cm = np.take_along_axis(cost, km[None], 0)[0]
        cp = np.take_along_axis(cost, kp[None], 0)[0]
        den = cm - 2.0 * cb + cp
        ok = inner & (den > 0)
        safe = np.where(ok, den, 1.0)
        sub = 0.5 * (cm - cp) / safe
        sub = np.minimum(np.maximum(sub, -0.5), 0.5)
        return np.where(ok, sub, 0.0)

    flow = np.stack([bdx + refine(1, bdx), bdy + refine(n, bdy)]).astype(np.float64)
    return flow, cb
