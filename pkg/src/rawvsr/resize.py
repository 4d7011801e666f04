"""Bicubic resampling with MATLAB ``imresize`` semantics.

Resizing is separable and expressed as two dense weight matrices so the same
operator can be applied to numpy arrays and torch tensors alike.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def _cubic(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax ** 2, ax ** 3
    return ((1.5 * ax3 - 2.5 * ax2 + 1) * (ax <= 1)
            + (-0.5 * ax3 + 2.5 * ax2 - 4 * ax + 2) * ((ax > 1) & (ax <= 2)))


@lru_cache(maxsize=128)
def resize_matrix(in_size: int, out_size: int, antialias: bool = True) -> np.ndarray:
    """Return the (out_size, in_size) bicubic interpolation matrix.

    Boundary samples are mirrored, and every row sums to one.
    """
    scale = out_size / in_size
    width = 4.0
    if scale < 1 and antialias:
        kernel = lambda x: scale * _cubic(scale * x)  # noqa: E731
        width = width / scale
    else:
        kernel = _cubic
    u = np.arange(1, out_size + 1, dtype=np.float64)
    x = u / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(x - width / 2)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(x[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    # 1-based -> 0-based with symmetric padding
    idx = idx.astype(np.int64) - 1
    period = 2 * in_size
    idx = np.mod(idx, period)
    idx = np.where(idx >= in_size, period - 1 - idx, idx)
    mat = np.zeros((out_size, in_size))
    np.add.at(mat, (np.repeat(np.arange(out_size), taps), idx.ravel()), weights.ravel())
    mat.setflags(write=False)
    return mat


def imresize(img, out_hw: tuple[int, int], antialias: bool = True):
    """Bicubically resize the trailing two axes of ``img`` to ``out_hw``.

    Accepts numpy arrays or torch tensors of shape ``(..., H, W)``.
    """
    h, w = img.shape[-2:]
    mh = resize_matrix(h, out_hw[0], antialias)
    mw = resize_matrix(w, out_hw[1], antialias)
    if isinstance(img, np.ndarray):
        out = np.matmul(np.matmul(mh, img.astype(np.float64)), mw.T)
        return out.astype(img.dtype if img.dtype.kind == "f" else np.float64)
    import torch

    th = torch.from_numpy(np.array(mh)).to(img)
    tw = torch.from_numpy(np.array(mw)).to(img)
    return torch.matmul(torch.matmul(th, img), tw.transpose(0, 1))


def downsample(img, factor: int):
    """Bicubic downsample by an integer factor."""
    h, w = img.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"size {h}x{w} is not divisible by {factor}")
    return imresize(img, (h // factor, w // factor))


def upsample(img, factor: int):
    """Bicubic upsample by an integer factor."""
    h, w = img.shape[-2:]
    return imresize(img, (h * factor, w * factor))
