# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for image remapping and block matching.

Every routine mirrors a function of the same name in ``fallback.py`` and
performs the floating point operations in the same order, so both back ends
return bit-identical results.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def remap_bilinear(double[:, :, ::1] img, double[:, ::1] map_x, double[:, ::1] map_y,
                   bint clamp_border=False):
    cdef Py_ssize_t C = img.shape[0], H = img.shape[1], W = img.shape[2]
    cdef Py_ssize_t Ho = map_x.shape[0], Wo = map_x.shape[1]
    out_arr = np.zeros((C, Ho, Wo), dtype=np.float64)
    valid_arr = np.zeros((Ho, Wo), dtype=np.uint8)
    cdef double[:, :, ::1] out = out_arr
    cdef unsigned char[:, ::1] valid = valid_arr
    cdef Py_ssize_t i, j, c, x0, y0, x1, y1
    cdef double x, y, fx, fy, w00, w01, w10, w11
    cdef double xmax = W - 1, ymax = H - 1
    with nogil:
        for i in range(Ho):
            for j in range(Wo):
                x = map_x[i, j]
                y = map_y[i, j]
                if x >= 0 and x <= xmax and y >= 0 and y <= ymax:
                    valid[i, j] = 1
                elif clamp_border:
                    x = min(max(x, 0.0), xmax)
                    y = min(max(y, 0.0), ymax)
                else:
                    continue
                x0 = <Py_ssize_t>floor(x)
                y0 = <Py_ssize_t>floor(y)
                fx = x - x0
                fy = y - y0
                x1 = x0 + 1 if x0 + 1 < W else W - 1
                y1 = y0 + 1 if y0 + 1 < H else H - 1
                w00 = (1.0 - fy) * (1.0 - fx)
                w01 = (1.0 - fy) * fx
                w10 = fy * (1.0 - fx)
                w11 = fy * fx
                for c in range(C):
                    out[c, i, j] = (w00 * img[c, y0, x0] + w01 * img[c, y0, x1]
                                    + w10 * img[c, y1, x0] + w11 * img[c, y1, x1])
    return out_arr, valid_arr.astype(bool)


def remap_nearest(double[:, :, ::1] img, double[:, ::1] map_x, double[:, ::1] map_y):
    cdef Py_ssize_t C = img.shape[0], H = img.shape[1], W = img.shape[2]
    cdef Py_ssize_t Ho = map_x.shape[0], Wo = map_x.shape[1]
    out_arr = np.zeros((C, Ho, Wo), dtype=np.float64)
    valid_arr = np.zeros((Ho, Wo), dtype=np.uint8)
    cdef double[:, :, ::1] out = out_arr
    cdef unsigned char[:, ::1] valid = valid_arr
    cdef Py_ssize_t i, j, c, xi, yi
    with nogil:
        for i in range(Ho):
            for j in range(Wo):
                xi = <Py_ssize_t>floor(map_x[i, j] + 0.5)
                yi = <Py_ssize_t>floor(map_y[i, j] + 0.5)
                if xi < 0 or xi >= W or yi < 0 or yi >= H:
                    continue
                valid[i, j] = 1
                for c in range(C):
                    out[c, i, j] = img[c, yi, xi]
    return out_arr, valid_arr.astype(bool)


def block_match(double[:, :, ::1] a, double[:, :, ::1] b, int radius, int block_radius,
                double penalty=0.0, bint subpixel=True):
    """SSD search over integer shifts plus parabolic sub-pixel refinement.

    ``penalty * |d|^2`` is added to every candidate cost.
    """
    cdef Py_ssize_t C = a.shape[0], H = a.shape[1], W = a.shape[2]
    cdef int n = 2 * radius + 1
    cost_arr = np.empty((n * n, H, W), dtype=np.float64)
    cdef double[:, :, ::1] cost = cost_arr
    diff_arr = np.empty((H, W), dtype=np.float64)
    rows_arr = np.empty((H, W), dtype=np.float64)
    cdef double[:, ::1] diff = diff_arr
    cdef double[:, ::1] rows = rows_arr
    cdef Py_ssize_t i, j, c, yy, xx, k, kk
    cdef int dy, dx
    cdef double acc, d, pen
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            k = (dy + radius) * n + (dx + radius)
            pen = penalty * (dy * dy + dx * dx)
            with nogil:
                for i in range(H):
                    yy = i + dy
                    yy = 0 if yy < 0 else (H - 1 if yy >= H else yy)
                    for j in range(W):
                        xx = j + dx
                        xx = 0 if xx < 0 else (W - 1 if xx >= W else xx)
                        d = a[0, i, j] - b[0, yy, xx]
                        acc = d * d
                        for c in range(1, C):
                            d = a[c, i, j] - b[c, yy, xx]
                            acc = acc + d * d
                        diff[i, j] = acc
                # separable window sums, accumulated in order k = -r..r
                for i in range(H):
                    for j in range(W):
                        acc = 0.0
                        for kk in range(-block_radius, block_radius + 1):
                            xx = j + kk
                            if xx >= 0 and xx < W:
                                acc = acc + diff[i, xx]
                        rows[i, j] = acc
                for i in range(H):
                    for j in range(W):
                        acc = 0.0
                        for kk in range(-block_radius, block_radius + 1):
                            yy = i + kk
                            if yy >= 0 and yy < H:
                                acc = acc + rows[yy, j]
                        cost[k, i, j] = acc + pen
    return _select(cost_arr, radius, subpixel)


def _select(cost_arr, int radius, bint subpixel=True):
    cdef double[:, :, ::1] cost = cost_arr
    cdef Py_ssize_t H = cost.shape[1], W = cost.shape[2]
    cdef int n = 2 * radius + 1
    flow_arr = np.zeros((2, H, W), dtype=np.float64)
    best_arr = np.zeros((H, W), dtype=np.float64)
    cdef double[:, :, ::1] flow = flow_arr
    cdef double[:, ::1] best = best_arr
    cdef Py_ssize_t i, j, k, kb
    cdef int dy, dx, bdy, bdx, mag, bmag
    cdef double cv, cb, cm, cp, den, sub
    with nogil:
        for i in range(H):
            for j in range(W):
                cb = cost[radius * n + radius, i, j]
                bdy = 0
                bdx = 0
                bmag = 0
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        cv = cost[(dy + radius) * n + (dx + radius), i, j]
                        mag = dy * dy + dx * dx
                        if cv < cb or (cv == cb and mag < bmag):
                            cb = cv
                            bdy = dy
                            bdx = dx
                            bmag = mag
                best[i, j] = cb
                kb = (bdy + radius) * n + (bdx + radius)
                sub = 0.0
                if subpixel and cb > 0 and -radius < bdx < radius:
                    cm = cost[kb - 1, i, j]
                    cp = cost[kb + 1, i, j]
                    den = cm - 2.0 * cb + cp
                    if den > 0:
                        sub = 0.5 * (cm - cp) / den
                        sub = min(max(sub, -0.5), 0.5)
                flow[0, i, j] = bdx + sub
                sub = 0.0
                if subpixel and cb > 0 and -radius < bdy < radius:
                    cm = cost[kb - n, i, j]
                    cp = cost[kb + n, i, j]
                    den = cm - 2.0 * cb + cp
                    if den > 0:
                        sub = 0.5 * (cm - cp) / den
                        sub = min(max(sub, -0.5), 0.5)
                flow[1, i, j] = bdy + sub
    return flow_arr, best_arr
