"""Hot loops for the alignment toolkit.

The compiled Cython extension is used when it was built; otherwise the numpy
fallback is selected at import. Set ``RAWVSR_NO_EXT=1`` to force the
fallback.
"""

import os

import numpy as np

from . import fallback

try:
    if os.environ.get("RAWVSR_NO_EXT", "") not in ("", "0"):
        raise ImportError("compiled kernels disabled by RAWVSR_NO_EXT")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"
_impl = _compiled if _compiled is not None else fallback


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython", "numpy" or None for default)."""
    if name is None:
        return _impl
    if name == "numpy":
        return fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def remap_bilinear(img, map_x, map_y, clamp_border=False, backend=None):
    """Bilinear backward sampling of a (C, H, W) image at the given coordinates.

    Returns:
        tuple: ``(out, valid)`` where ``valid`` marks in-field samples.
    """
    return get_backend(backend).remap_bilinear(_c64(img), _c64(map_x), _c64(map_y), bool(clamp_border))


def remap_nearest(img, map_x, map_y, backend=None):
    return get_backend(backend).remap_nearest(_c64(img), _c64(map_x), _c64(map_y))


def block_match(a, b, radius, block_radius, penalty=0.0, subpixel=True, backend=None):
    """Exhaustive SSD search over ``[-radius, radius]^2`` integer shifts.

    Ties are broken towards the smallest displacement, so textureless regions
    report zero motion. ``penalty * |d|^2`` is added to each candidate cost;
    ``subpixel`` enables the parabolic refinement along each axis.

    Returns:
        tuple: ``(flow, cost)``; ``flow`` is (2, H, W) holding (dx, dy).
    """
    return get_backend(backend).block_match(_c64(a), _c64(b), int(radius), int(block_radius),
                                          float(penalty), bool(subpixel))
