"""Geometric transforms: homographies, flow fields and backward warping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _native
from ..errors import EstimationError


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform normalized so that ``matrix[2, 2] == 1``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise EstimationError(f"homography must be a finite 3x3 matrix, got {m}")
        if abs(m[2, 2]) < 1e-15:
            raise EstimationError("homography has a vanishing bottom-right element")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise EstimationError("homography is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, points) -> np.ndarray:
        """Map (N, 2) points ``(x, y)``."""
        return apply_homography(self.matrix, points)

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (dx, dy) stored as a (2, H, W) array.

    A flow ``f`` between target ``a`` and source ``b`` satisfies
    ``a(p) ~= b(p + f(p))``.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[0] != 2:
            raise ValueError(f"flow must be (2, H, W), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("flow contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]

    @classmethod
    def zeros(cls, h: int, w: int) -> "FlowField":
        return cls(np.zeros((2, h, w)))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.data[0], self.data[1])


def apply_homography(matrix, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    homog = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ np.asarray(matrix).T
    return homog[:, :2] / homog[:, 2:3]


def _as_chw(img):
    img = np.asarray(img)
    return (img[None], True) if img.ndim == 2 else (img, False)


def _sample(img, map_x, map_y, mode, clamp_border=False):
    chw, squeeze = _as_chw(img)
    if mode == "bilinear":
        out, valid = _native.remap_bilinear(chw, map_x, map_y, clamp_border)
    elif mode == "nearest":
        if clamp_border:
            h, w = chw.shape[1:]
            map_x = np.clip(map_x, 0, w - 1)
            map_y = np.clip(map_y, 0, h - 1)
        out, valid = _native.remap_nearest(chw, map_x, map_y)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    out = out.astype(np.result_type(chw.dtype, np.float32)) if chw.dtype.kind == "f" else out
    return (out[0] if squeeze else out), valid


def warp_image(img, homography, out_size: tuple[int, int], mode: str = "bilinear"):
    """Backward-warp ``img`` so that ``out(H p) = img(p)``.

    Args:
        img: (H, W) or (C, H, W) array.
        homography: :class:`Homography` or 3x3 array mapping source to output coordinates.
        out_size: ``(height, width)`` of the output.
        mode: ``"bilinear"`` or ``"nearest"``.

    Returns:
        tuple: ``(warped, valid)``; out-of-field pixels are zero and ``valid`` is False there.
    """
    hmat = homography.matrix if isinstance(homography, Homography) else Homography(homography).matrix
    inv = np.linalg.inv(hmat)
    h, w = out_size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src = apply_homography(inv, np.stack([xs.ravel(), ys.ravel()], axis=1))
    return _sample(img, src[:, 0].reshape(h, w), src[:, 1].reshape(h, w), mode)


def warp_flow(img, flow: FlowField, mode: str = "bilinear", clamp_border: bool = True):
    """Sample ``img`` at ``p + flow(p)``; returns ``(warped, valid)``."""
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return _sample(img, xs + flow.data[0], ys + flow.data[1], mode, clamp_border)


_HALF = np.diag([0.5, 0.5, 1.0])
_DOUBLE = np.diag([2.0, 2.0, 1.0])


def rescale_for_subframe(t):
    """Express a full-resolution transform in packed (half-resolution) coordinates.

    A homography is conjugated by ``S = diag(0.5, 0.5, 1)``, which halves the
    translation and leaves the linear block unchanged. A flow field is
    averaged over 2x2 blocks (bilinear downsampling by two) and its vectors
    are halved.
    """
    if isinstance(t, Homography):
        return Homography(_HALF @ t.matrix @ _DOUBLE)
    if isinstance(t, FlowField):
        d = t.data
        h, w = d.shape[1:]
        if h % 2 or w % 2:
            raise ValueError(f"flow size {h}x{w} must be even to rescale")
        down = 0.25 * (d[:, 0::2, 0::2] + d[:, 0::2, 1::2] + d[:, 1::2, 0::2] + d[:, 1::2, 1::2])
        return FlowField(0.5 * down)
    raise TypeError(f"cannot rescale {type(t).__name__}")
