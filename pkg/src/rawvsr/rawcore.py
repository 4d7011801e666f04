"""Bayer-domain frame types and lossless structural transforms.

Channel order for packed frames is always (R, G1, G2, B), where G1 is the
green site sharing a row with red and G2 the green site sharing a row with
blue.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np

logger = logging.getLogger(__name__)

PHASES = ("RGGB", "BGGR", "GRBG", "GBRG")

# (row, col) offset inside the 2x2 tile for each packed plane (R, G1, G2, B).
_SITES = {
    "RGGB": ((0, 0), (0, 1), (1, 0), (1, 1)),
    "BGGR": ((1, 1), (1, 0), (0, 1), (0, 0)),
    "GRBG": ((0, 1), (0, 0), (1, 1), (1, 0)),
    "GBRG": ((1, 0), (1, 1), (0, 0), (0, 1)),
}


class RawFormatError(ValueError):
    """Base class for malformed raw frames."""


class InvalidMetadataError(RawFormatError):
    pass


class ShapeError(RawFormatError):
    pass


class PhaseViolationError(RawFormatError):
    pass


class BoundsError(RawFormatError):
    pass


def bayer_sites(phase: str) -> tuple[tuple[int, int], ...]:
    """Return the (row, col) tile offsets of the R, G1, G2, B sites.

    G1 is the green on the red row and G2 the green on the blue row.
    """
    try:
        return _SITES[phase]
    except KeyError:
        raise InvalidMetadataError(f"unknown Bayer phase {phase!r}; expected one of {PHASES}") from None


def _check_even(shape: tuple[int, ...]) -> None:
    if len(shape) != 2:
        raise ShapeError(f"mosaic must be 2-D, got shape {shape}")
    if shape[0] % 2 or shape[1] % 2:
        raise ShapeError(f"mosaic dimensions must be even, got {shape[0]}x{shape[1]}")


@dataclass(frozen=True)
class RawBayerFrame:
    """Single-plane colour filter array mosaic.

    Attributes:
        data: (H, W) array of sensor counts, or reals in [0, 1] when normalized.
        phase: colour occupying each 2x2 tile, e.g. ``"RGGB"``.
        bit_depth: sensor bit depth of the unnormalized counts.
        black_level: sensor black level in counts.
        white_level: sensor saturation level in counts.
        normalized: whether ``data`` has been mapped onto [0, 1].
        clamped: number of samples clamped during normalization.
    """

    data: np.ndarray
    phase: str = "RGGB"
    bit_depth: int = 14
    black_level: float = 0.0
    white_level: float = 16383.0
    normalized: bool = False
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        _check_even(self.data.shape)
        bayer_sites(self.phase)
        if not self.white_level > self.black_level:
            raise InvalidMetadataError(
                f"white_level ({self.white_level}) must exceed black_level ({self.black_level})")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def metadata(self) -> dict:
        return {
            "phase": self.phase,
            "bit_depth": int(self.bit_depth),
            "black_level": float(self.black_level),
            "white_level": float(self.white_level),
        }


@dataclass(frozen=True)
class PackedRawFrame:
    """Four half-resolution colour planes in (R, G1, G2, B) order."""

    planes: np.ndarray
    phase: str = "RGGB"
    bit_depth: int = 14
    black_level: float = 0.0
    white_level: float = 16383.0
    normalized: bool = False

    def __post_init__(self):
        if self.planes.ndim != 3 or self.planes.shape[0] != 4:
            raise ShapeError(f"packed frame needs 4 planes of equal shape, got {self.planes.shape}")
        bayer_sites(self.phase)

    @classmethod
    def from_planes(cls, planes, **meta) -> "PackedRawFrame":
        """Build from a sequence of four arrays, checking their shapes agree."""
        shapes = {np.shape(p) for p in planes}
        if len(planes) != 4 or len(shapes) != 1:
            raise ShapeError(f"expected 4 planes of identical shape, got {[np.shape(p) for p in planes]}")
        return cls(np.stack([np.asarray(p) for p in planes]), **meta)


@dataclass(frozen=True)
class SRGBFrame:
    """Display-referred RGB frame stored channel-first, values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ShapeError(f"sRGB frame must be (3, H, W), got {self.data.shape}")
        object.__setattr__(self, "data", np.clip(self.data, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def normalize_raw(frame: RawBayerFrame) -> RawBayerFrame:
    """Subtract the black level and scale by the white level.

    Values outside ``[black, white]`` are clamped and counted in
    ``RawBayerFrame.clamped`` rather than rejected; hot pixels are common.
    """
    if frame.normalized:
        return frame
    black, white = float(frame.black_level), float(frame.white_level)
    if not white > black:
        raise InvalidMetadataError(f"white_level ({white}) must exceed black_level ({black})")
    scaled = (frame.data.astype(np.float64) - black) / (white - black)
    n_out = int(np.count_nonzero((scaled < 0.0) | (scaled > 1.0)))
    if n_out:
        logger.warning("clamped %d out-of-range raw samples", n_out)
    out = np.clip(scaled, 0.0, 1.0).astype(np.float32)
    return replace(frame, data=out, normalized=True, clamped=frame.clamped + n_out)


def pack_bayer(frame: RawBayerFrame) -> PackedRawFrame:
    """Split a mosaic into its four same-colour sub-frames."""
    _check_even(frame.data.shape)
    planes = np.stack([frame.data[r::2, c::2] for r, c in bayer_sites(frame.phase)])
    return PackedRawFrame(planes, frame.phase, frame.bit_depth, frame.black_level,
                          frame.white_level, frame.normalized)


def unpack_bayer(packed: PackedRawFrame) -> RawBayerFrame:
    """Exact inverse of :func:`pack_bayer`."""
    planes = packed.planes
    if planes.ndim != 3 or planes.shape[0] != 4:
        raise ShapeError(f"expected (4, h, w) planes, got {planes.shape}")
    _, h, w = planes.shape
    mosaic = np.empty((2 * h, 2 * w), dtype=planes.dtype)
    for plane, (r, c) in zip(planes, bayer_sites(packed.phase)):
        mosaic[r::2, c::2] = plane
    return RawBayerFrame(mosaic, packed.phase, packed.bit_depth, packed.black_level,
                         packed.white_level, packed.normalized)


def crop_phase_safe(frame: RawBayerFrame, x0: int, y0: int, w: int, h: int) -> RawBayerFrame:
    """Crop a sub-mosaic whose origin and extent keep the Bayer phase."""
    if any(v % 2 for v in (x0, y0, w, h)):
        raise PhaseViolationError(f"crop (x0={x0}, y0={y0}, w={w}, h={h}) must use even values")
    if x0 < 0 or y0 < 0 or w <= 0 or h <= 0 or x0 + w > frame.width or y0 + h > frame.height:
        raise BoundsError(f"crop (x0={x0}, y0={y0}, w={w}, h={h}) outside {frame.width}x{frame.height} frame")
    return replace(frame, data=frame.data[y0:y0 + h, x0:x0 + w])


def quantize(values: np.ndarray, bit_depth: int, black_level: float = 0.0,
             white_level: float | None = None) -> np.ndarray:
    """Map normalized values in [0, 1] back to integer sensor counts."""
    if white_level is None:
        white_level = float(2 ** bit_depth - 1)
    counts = np.rint(np.clip(values, 0.0, 1.0) * (white_level - black_level) + black_level)
    return counts.astype(np.uint16 if bit_depth <= 16 else np.uint32)


# --- persistence -----------------------------------------------------------

def save_raw_png(path, frame: RawBayerFrame) -> None:
    """Write a mosaic as a 16-bit grey PNG plus a JSON sidecar of metadata."""
    path = Path(path)
    if frame.normalized:
        data = quantize(frame.data, frame.bit_depth, frame.black_level, frame.white_level)
    else:
        data = np.asarray(frame.data)
        if data.min() < 0 or data.max() > 65535:
            raise InvalidMetadataError("raw counts do not fit a 16-bit PNG")
        data = data.astype(np.uint16)
    if not cv2.imwrite(str(path), data):
        raise OSError(f"could not write {path}")
    path.with_suffix(".json").write_text(json.dumps(frame.metadata(), indent=2), encoding="utf-8")


def load_raw_png(path) -> RawBayerFrame:
    path = Path(path)
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise FileNotFoundError(f"could not read raw PNG {path}")
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    bit_depth = int(meta.get("bit_depth", 16))
    return RawBayerFrame(
        data,
        phase=meta.get("phase", "RGGB"),
        bit_depth=bit_depth,
        black_level=float(meta.get("black_level", 0.0)),
        white_level=float(meta.get("white_level", 2 ** bit_depth - 1)),
    )


def save_srgb_png(path, frame) -> None:
    """Write a (3, H, W) frame in [0, 1] as an 8-bit PNG."""
    data = frame.data if isinstance(frame, SRGBFrame) else np.asarray(frame)
    img = np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    if not cv2.imwrite(str(path), cv2.cvtColor(img, cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write {path}")


def load_srgb_png(path) -> SRGBFrame:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise FileNotFoundError(f"could not read sRGB PNG {path}")
    rgb = cv2.cvtColor(img, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    return SRGBFrame(rgb.transpose(2, 0, 1))
