"""Synthetic LR-HR raw video pairs.

The generator mimics a two-camera capture: the HR sRGB clip is linearized,
optionally blurred, bicubically downsampled, given a per-clip colour cast,
mosaicked, corrupted with heteroscedastic noise and quantized.
"""

from __future__ import annotations

import json
import logging
import shutil
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from . import rawcore
from .errors import DataError
from .rawcore import RawBayerFrame, SRGBFrame, ShapeError
from .resize import downsample

logger = logging.getLogger(__name__)

DATASET_FORMAT = "rawvsr-dataset-v1"


@dataclass
class DegradationConfig:
    scale: int = 2
    blur_sigma: float = 0.0
    read_noise_sigma: float = 0.002
    shot_noise_gain: float = 0.0005
    channel_gain_range: tuple[float, float] = (0.8, 1.25)
    bit_depth: int = 14
    black_level: float = 512.0
    phase: str = "RGGB"
    pyramid_levels: int = 3
    seed: int = 0

    def __post_init__(self):
        self.channel_gain_range = tuple(float(g) for g in self.channel_gain_range)
        lo, hi = self.channel_gain_range
        if not 0 < lo <= hi:
            raise ValueError(f"channel_gain_range must satisfy 0 < lo <= hi, got {self.channel_gain_range}")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.blur_sigma < 0 or self.read_noise_sigma < 0 or self.shot_noise_gain < 0:
            raise ValueError("blur and noise parameters must be non-negative")
        if self.black_level >= 2 ** self.bit_depth - 1:
            raise ValueError("black_level must be below the white level")

    @property
    def white_level(self) -> float:
        return float(2 ** self.bit_depth - 1)


@dataclass
class ClipSample:
    """One training/evaluation unit: 2N+1 LR frames and the HR centre frame."""

    lr_raw: list[RawBayerFrame]
    lr_rgb: list[SRGBFrame]
    hr_rgb: SRGBFrame
    applied_gains: tuple[float, float, float]
    clip_id: str = ""
    center: int = 0
    extra: dict = field(default_factory=dict)


def linearize(img: np.ndarray) -> np.ndarray:
    """Inverse sRGB transfer curve (display -> linear)."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def delinearize(img: np.ndarray) -> np.ndarray:
    """Forward sRGB transfer curve (linear -> display)."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1 / 2.4) - 0.055)


def mosaic(linear_rgb: np.ndarray, phase: str = "RGGB") -> np.ndarray:
    """Sample a (3, H, W) image onto a Bayer lattice; returns an (H, W) mosaic."""
    rgb = np.asarray(linear_rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) image, got {rgb.shape}")
    h, w = rgb.shape[1:]
    if h % 2 or w % 2:
        raise ShapeError(f"mosaic needs even dimensions, got {h}x{w}")
    out = np.empty((h, w), dtype=rgb.dtype)
    for plane_color, (r, c) in zip((0, 1, 1, 2), rawcore.bayer_sites(phase)):
        out[r::2, c::2] = rgb[plane_color, r::2, c::2]
    return out


def demosaic_preview(frame: RawBayerFrame) -> np.ndarray:
    """Half-resolution RGB preview from a normalized mosaic (green sites averaged)."""
    planes = rawcore.pack_bayer(rawcore.normalize_raw(frame)).planes
    return np.stack([planes[0], 0.5 * (planes[1] + planes[2]), planes[3]])


def clip_rng(seed: int, clip_id: str) -> np.random.Generator:
    """Independent random stream for one clip, derived from (seed, clip_id)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(clip_id.encode())]))


def sample_gains(cfg: DegradationConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.channel_gain_range
    return rng.uniform(lo, hi, size=3)


def degrade_frame(hr: np.ndarray, cfg: DegradationConfig, gains, rng: np.random.Generator):
    """Degrade one HR sRGB frame.

    Returns:
        tuple: (RawBayerFrame with integer counts, LR sRGB array, LR linear RGB
        array before mosaicking).
    """
    lin = linearize(hr)
    if cfg.blur_sigma > 0:
        lin = np.stack([gaussian_filter(ch, cfg.blur_sigma, mode="reflect") for ch in lin])
    lr_lin = np.clip(downsample(lin, cfg.scale), 0.0, 1.0)
    lr_lin = np.clip(lr_lin * np.asarray(gains, dtype=np.float64)[:, None, None], 0.0, 1.0)
    lr_rgb = delinearize(lr_lin)
    m = mosaic(lr_lin, cfg.phase)
    if cfg.read_noise_sigma > 0 or cfg.shot_noise_gain > 0:
        std = np.sqrt(cfg.read_noise_sigma ** 2 + cfg.shot_noise_gain * m)
        m = m + std * rng.standard_normal(m.shape)
    counts = rawcore.quantize(m, cfg.bit_depth, cfg.black_level, cfg.white_level)
    raw = RawBayerFrame(counts, cfg.phase, cfg.bit_depth, cfg.black_level, cfg.white_level)
    return raw, lr_rgb.astype(np.float32), lr_lin


def crop_to_multiple(frames: Sequence[np.ndarray], multiple: int) -> list[np.ndarray]:
    """Centre-crop (3, H, W) frames so both dimensions divide ``multiple``."""
    h, w = frames[0].shape[1:]
    nh, nw = h - h % multiple, w - w % multiple
    if nh == 0 or nw == 0:
        raise DataError(f"frames of size {h}x{w} are smaller than the required multiple {multiple}")
    y0, x0 = (h - nh) // 2, (w - nw) // 2
    return [f[:, y0:y0 + nh, x0:x0 + nw] for f in frames]


def _check_hr(hr_frames, cfg: DegradationConfig):
    shapes = {f.shape for f in hr_frames}
    if len(shapes) != 1:
        raise ShapeError(f"all HR frames must share one shape, got {shapes}")
    h, w = hr_frames[0].shape[1:]
    multiple = cfg.scale * 2 ** max(cfg.pyramid_levels, 1)
    if h % multiple or w % multiple:
        raise ShapeError(f"HR size {h}x{w} must be divisible by {multiple} (scale * 2^levels)")


def degrade_sequence(hr_frames: Sequence[np.ndarray], cfg: DegradationConfig, clip_id: str = "clip"):
    """Degrade every frame of an HR clip with one per-clip colour cast.

    Returns:
        tuple: (list of RawBayerFrame, list of LR sRGB arrays, gains array).
    """
    hr_frames = [np.asarray(f, dtype=np.float64) for f in hr_frames]
    _check_hr(hr_frames, cfg)
    rng = clip_rng(cfg.seed, clip_id)
    gains = sample_gains(cfg, rng)
    raws, rgbs = [], []
    for hr in hr_frames:
        raw, lr_rgb, _ = degrade_frame(hr, cfg, gains, rng)
        raws.append(raw)
        rgbs.append(lr_rgb)
    return raws, rgbs, gains


def degrade_clip(hr_clip: Sequence[np.ndarray], cfg: DegradationConfig, radius: int = 2,
                 center: int | None = None, clip_id: str = "clip") -> ClipSample:
    """Build a :class:`ClipSample` of ``2 * radius + 1`` LR frames around ``center``."""
    n = 2 * radius + 1
    if len(hr_clip) < n:
        raise DataError(f"clip has {len(hr_clip)} frames, need at least {n}")
    if center is None:
        center = len(hr_clip) // 2
    if not radius <= center < len(hr_clip) - radius:
        raise DataError(f"centre {center} leaves no room for radius {radius}")
    window = list(hr_clip[center - radius:center + radius + 1])
    raws, rgbs, gains = degrade_sequence(window, cfg, clip_id)
    return ClipSample(
        lr_raw=raws,
        lr_rgb=[SRGBFrame(r) for r in rgbs],
        hr_rgb=SRGBFrame(np.asarray(window[radius], dtype=np.float32)),
        applied_gains=tuple(float(g) for g in gains),
        clip_id=clip_id,
        center=center,
    )


# --- source clips ----------------------------------------------------------

def synthetic_source_clips(n_clips: int = 2, n_frames: int = 7, size: tuple[int, int] = (128, 128),
                           seed: int = 0, max_speed: float = 3.0) -> dict[str, list[np.ndarray]]:
    """Make HR sRGB clips by panning a window across bundled sample photographs.

    Each clip drifts with a constant random sub-pixel velocity; motion is
    rendered with bicubic resampling of a larger canvas.
    """
    import skimage.data
    from .alignkit.warp import warp_image

    photos = [skimage.data.astronaut, skimage.data.coffee, skimage.data.chelsea,
              skimage.data.rocket, skimage.data.immunohistochemistry]
    rng = np.random.default_rng(seed)
    clips = {}
    h, w = size
    for i in range(n_clips):
        photo = photos[i % len(photos)]().astype(np.float64) / 255.0
        photo = photo.transpose(2, 0, 1)
        ph, pw = photo.shape[1:]
        margin = int(np.ceil(max_speed * n_frames)) + 2
        if ph < h + 2 * margin or pw < w + 2 * margin:
            from .resize import imresize
            k = max((h + 2 * margin) / ph, (w + 2 * margin) / pw)
            photo = np.clip(imresize(photo, (int(np.ceil(ph * k)), int(np.ceil(pw * k)))), 0, 1)
            ph, pw = photo.shape[1:]
        y0 = rng.uniform(margin, ph - h - margin)
        x0 = rng.uniform(margin, pw - w - margin)
        vel = rng.uniform(-max_speed, max_speed, size=2)
        frames = []
        for t in range(n_frames):
            dx, dy = x0 + vel[0] * t, y0 + vel[1] * t
            hmat = np.array([[1.0, 0.0, -dx], [0.0, 1.0, -dy], [0.0, 0.0, 1.0]])
            out, _ = warp_image(photo, hmat, (h, w))
            frames.append(np.clip(out, 0.0, 1.0).astype(np.float32))
        clips[f"clip_{i:03d}"] = frames
    return clips


def write_source_clips(clips: dict[str, list[np.ndarray]], root) -> Path:
    root = Path(root)
    for cid, frames in clips.items():
        d = root / cid
        d.mkdir(parents=True, exist_ok=True)
        for t, f in enumerate(frames):
            rawcore.save_srgb_png(d / f"{t:04d}.png", f)
    return root


def read_source_clips(src_dir) -> dict[str, list[np.ndarray]]:
    """Read PNG sequences: one sub-directory per clip, or a flat directory as one clip."""
    src = Path(src_dir)
    if not src.is_dir():
        raise DataError(f"source directory {src} does not exist")
    subdirs = sorted(p for p in src.iterdir() if p.is_dir())
    groups = {p.name: sorted(p.glob("*.png")) for p in subdirs}
    groups = {k: v for k, v in groups.items() if v}
    if not groups:
        flat = sorted(src.glob("*.png"))
        if flat:
            groups = {src.name: flat}
    if not groups:
        raise DataError(f"no PNG sequences found under {src}")
    clips = {}
    for cid, files in groups.items():
        try:
            clips[cid] = [rawcore.load_srgb_png(f).data for f in files]
        except FileNotFoundError as exc:
            raise DataError(str(exc)) from exc
    return clips


# --- dataset tree ----------------------------------------------------------

def _resolve_split(clip_ids: Sequence[str], split_spec) -> dict[str, str]:
    split_spec = split_spec or {}
    out = {cid: "train" for cid in clip_ids}
    frac = split_spec.get("test_fraction")
    if frac:
        n_test = max(1, int(round(len(clip_ids) * float(frac))))
        for cid in sorted(clip_ids)[-n_test:]:
            out[cid] = "test"
    for name in ("train", "val", "test"):
        for cid in split_spec.get(name, []) or []:
            if cid not in out:
                raise DataError(f"split names unknown clip {cid!r}")
            out[cid] = name
    return out


def make_dataset(src_video_dir, out_dir, cfg: DegradationConfig, split_spec=None,
                 scales: Sequence[int] | None = None, force: bool = False,
                 clips: dict[str, list[np.ndarray]] | None = None) -> dict:
    """Write ``<out>/<s>x/<clip>/{lr_raw,lr_rgb,hr_rgb}/NNNN.png`` plus a manifest.

    Args:
        src_video_dir: directory of sRGB PNG sequences (ignored when ``clips`` given).
        out_dir: dataset root.
        cfg: degradation settings; ``cfg.scale`` is used if ``scales`` is None.
        split_spec: mapping with optional ``train``/``val``/``test`` clip-id lists
            or a ``test_fraction``.
        scales: scale factors to emit, one subtree each.
        force: replace a non-empty ``out_dir``.
        clips: in-memory source clips, bypassing ``src_video_dir``.

    Returns:
        The manifest dictionary that was written.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise DataError(f"output directory {out} is not empty (use force to overwrite)")
        shutil.rmtree(out)
    clips = clips if clips is not None else read_source_clips(src_video_dir)
    scales = list(scales) if scales else [cfg.scale]
    splits = _resolve_split(list(clips), split_spec)
    manifest = {"format": DATASET_FORMAT, "seed": cfg.seed, "scales": scales,
                "degradation": asdict(cfg), "clips": []}
    for s in scales:
        scfg = DegradationConfig(**{**asdict(cfg), "scale": s})
        for cid, frames in clips.items():
            hr = crop_to_multiple(frames, s * 2 ** max(scfg.pyramid_levels, 1))
            raws, rgbs, gains = degrade_sequence(hr, scfg, cid)
            base = out / f"{s}x" / cid
            for sub in ("lr_raw", "lr_rgb", "hr_rgb"):
                (base / sub).mkdir(parents=True, exist_ok=True)
            for t, (raw, lr_rgb, hr_frame) in enumerate(zip(raws, rgbs, hr)):
                rawcore.save_raw_png(base / "lr_raw" / f"{t:04d}.png", raw)
                rawcore.save_srgb_png(base / "lr_rgb" / f"{t:04d}.png", lr_rgb)
                rawcore.save_srgb_png(base / "hr_rgb" / f"{t:04d}.png", hr_frame)
            manifest["clips"].append({
                "id": cid, "scale": s, "split": splits[cid], "gains": [float(g) for g in gains],
                "seed": cfg.seed, "n_frames": len(hr),
                "lr_size": list(raws[0].data.shape), "hr_size": list(hr[0].shape[1:]),
            })
            logger.info("wrote clip %s at %dx (%d frames)", cid, s, len(hr))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest


@dataclass
class LoadedClip:
    """A clip read back from a dataset tree, raw frames normalized to [0, 1]."""

    clip_id: str
    scale: int
    lr_raw: np.ndarray          # (T, H, W) float32
    lr_rgb: np.ndarray          # (T, 3, H, W) float32
    hr_rgb: np.ndarray          # (T, 3, sH, sW) float32
    phase: str = "RGGB"
    gains: tuple = (1.0, 1.0, 1.0)
    split: str = "train"


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest.json under {root}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != DATASET_FORMAT:
        raise DataError(f"unsupported dataset format {manifest.get('format')!r}")
    return manifest


def load_clip(root, entry: dict) -> LoadedClip:
    base = Path(root) / f"{entry['scale']}x" / entry["id"]
    raw_files = sorted((base / "lr_raw").glob("*.png"))
    if not raw_files:
        raise DataError(f"clip {base} has no lr_raw frames")
    raws = [rawcore.normalize_raw(rawcore.load_raw_png(f)) for f in raw_files]
    lr_rgb = [rawcore.load_srgb_png(base / "lr_rgb" / f.name).data for f in raw_files]
    hr_rgb = [rawcore.load_srgb_png(base / "hr_rgb" / f.name).data for f in raw_files]
    return LoadedClip(entry["id"], int(entry["scale"]), np.stack([r.data for r in raws]),
                      np.stack(lr_rgb), np.stack(hr_rgb), raws[0].phase,
                      tuple(entry.get("gains", (1, 1, 1))), entry.get("split", "train"))


def load_split(root, scale: int, split: str | None = "train") -> list[LoadedClip]:
    """Load every clip of ``scale`` (and ``split`` unless None) from a dataset tree."""
    manifest = read_manifest(root)
    entries = [c for c in manifest["clips"] if int(c["scale"]) == int(scale)
               and (split is None or c.get("split", "train") == split)]
    if not entries:
        raise DataError(f"dataset {root} has no {split or 'any'} clips at scale {scale}")
    return [load_clip(root, e) for e in entries]


def degrade_to_loaded(clips: dict[str, list[np.ndarray]], cfg: DegradationConfig,
                      split: str = "train") -> list[LoadedClip]:
    """Degrade in-memory HR clips straight into :class:`LoadedClip` records (no files)."""
    out = []
    for cid, frames in clips.items():
        hr = crop_to_multiple(frames, cfg.scale * 2 ** max(cfg.pyramid_levels, 1))
        raws, rgbs, gains = degrade_sequence(hr, cfg, cid)
        lr_raw = np.stack([rawcore.normalize_raw(r).data for r in raws]).astype(np.float32)
        out.append(LoadedClip(cid, cfg.scale, lr_raw, np.stack(rgbs).astype(np.float32),
                              np.stack(hr).astype(np.float32), cfg.phase,
                              tuple(float(g) for g in gains), split))
    return out
