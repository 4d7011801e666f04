"""Training loop: clip subsampling, phase-safe patches, checkpoints and resume."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import synthpipe
from .errors import DataError, TrainingDiverged
from .losses import corrected_loss
from .model import ModelConfig, RealRawVSR, load_checkpoint, save_checkpoint
from .synthpipe import LoadedClip

logger = logging.getLogger(__name__)

CORRECTION_MODES = ("channel", "matrix", "none")


@dataclass
class TrainConfig:
    """Optimisation settings.

    Args:
        iterations: optimizer steps.
        batch_size: patches per step.
        patch_size: LR (Bayer) patch side; a multiple of ``2 ** levels``.
        lr: Adam learning rate.
        betas: Adam moment coefficients.
        temporal_stride: keep every ``temporal_stride``-th frame of a clip.
        seed: seeds parameter init and patch sampling.
        checkpoint_interval: steps between checkpoints (0 disables intermediate ones).
        log_interval: steps between metric records.
        device: torch device string.
        deterministic: single-threaded, deterministic kernels.
        color_correction: ``channel``, ``matrix`` or ``none``.
        phase_flip: random phase-preserving flips.
        lr_schedule: ``constant`` or ``cosine``.
    """

    iterations: int = 2000
    batch_size: int = 4
    patch_size: int = 128
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    temporal_stride: int = 3
    seed: int = 0
    checkpoint_interval: int = 500
    log_interval: int = 10
    device: str = "cpu"
    deterministic: bool = True
    color_correction: str = "channel"
    phase_flip: bool = False
    lr_schedule: str = "constant"

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.temporal_stride < 1:
            raise ValueError("temporal_stride must be >= 1")
        if self.color_correction not in CORRECTION_MODES:
            raise ValueError(f"color_correction must be one of {CORRECTION_MODES}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    def check_model(self, model_cfg: ModelConfig):
        m = model_cfg.size_multiple
        if self.patch_size % m:
            raise ValueError(f"patch_size {self.patch_size} must be a multiple of {m}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def subsample_clip(frames: Sequence, stride: int = 3) -> list:
    """Keep every ``stride``-th frame, starting with the first."""
    frames = list(frames)
    if len(frames) < stride:
        raise DataError(f"need at least {stride} frames to subsample, got {len(frames)}")
    return frames[::stride]


def subsample_loaded(clip: LoadedClip, stride: int) -> LoadedClip:
    idx = subsample_clip(range(len(clip.lr_raw)), stride)
    return LoadedClip(clip.clip_id, clip.scale, clip.lr_raw[idx], clip.lr_rgb[idx], clip.hr_rgb[idx],
                      clip.phase, clip.gains, clip.split)


@dataclass
class Patch:
    raw: np.ndarray       # (2N+1, p, p)
    lr_rgb: np.ndarray    # (3, p, p), centre frame
    hr_rgb: np.ndarray    # (3, sp, sp), centre frame
    origin: tuple[int, int]
    center: int
    flips: tuple[bool, bool] = (False, False)


def sample_patch(clip: LoadedClip, rng: np.random.Generator, patch_size: int, radius: int,
                 center: int | None = None, phase_flip: bool = False) -> Patch:
    """Draw a phase-safe crop of ``2N+1`` consecutive frames and the HR centre.

    The crop origin is even in both axes. With ``phase_flip`` the window is
    shifted by one pixel along each flipped axis before mirroring, which
    keeps the CFA phase of the result.
    """
    n = 2 * radius + 1
    t_total, h, w = clip.lr_raw.shape
    s = clip.scale
    if t_total < n:
        raise DataError(f"clip {clip.clip_id} has {t_total} frames, need {n}")
    extra = 1 if phase_flip else 0
    if h < patch_size + extra or w < patch_size + extra:
        raise DataError(f"clip {clip.clip_id} frames {h}x{w} smaller than patch {patch_size}")
    if center is None:
        center = int(rng.integers(radius, t_total - radius))
    y0 = 2 * int(rng.integers(0, (h - patch_size - extra) // 2 + 1))
    x0 = 2 * int(rng.integers(0, (w - patch_size - extra) // 2 + 1))
    assert y0 % 2 == 0 and x0 % 2 == 0, "patch origin must be even"
    flip_v = flip_h = False
    if phase_flip:
        flip_v, flip_h = bool(rng.integers(0, 2)), bool(rng.integers(0, 2))
    oy, ox = y0 + int(flip_v), x0 + int(flip_h)
    frames = slice(center - radius, center + radius + 1)
    raw = clip.lr_raw[frames, oy:oy + patch_size, ox:ox + patch_size]
    lr = clip.lr_rgb[center, :, oy:oy + patch_size, ox:ox + patch_size]
    hr = clip.hr_rgb[center, :, s * oy:s * (oy + patch_size), s * ox:s * (ox + patch_size)]
    if flip_v:
        raw, lr, hr = raw[..., ::-1, :], lr[..., ::-1, :], hr[..., ::-1, :]
    if flip_h:
        raw, lr, hr = raw[..., ::-1], lr[..., ::-1], hr[..., ::-1]
    return Patch(np.ascontiguousarray(raw), np.ascontiguousarray(lr), np.ascontiguousarray(hr),
                 (y0, x0), center, (flip_v, flip_h))


def collate(patches: Sequence[Patch], device="cpu"):
    raw = torch.from_numpy(np.stack([p.raw for p in patches])).float().to(device)
    lr = torch.from_numpy(np.stack([p.lr_rgb for p in patches])).float().to(device)
    hr = torch.from_numpy(np.stack([p.hr_rgb for p in patches])).float().to(device)
    return raw, lr, hr


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: list[dict] = field(default_factory=list)
    final_step: int = 0


def load_dataset(dataset, scale: int, split: str = "train") -> list[LoadedClip]:
    if isinstance(dataset, (str, Path)):
        return synthpipe.load_split(dataset, scale, split)
    clips = list(dataset)
    if not clips:
        raise DataError("empty dataset")
    return clips


def set_deterministic(enabled: bool):
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)


def _schedule(cfg: TrainConfig) -> Callable[[int], float]:
    if cfg.lr_schedule == "cosine":
        return lambda step: 0.5 * (1 + math.cos(math.pi * min(step, cfg.iterations) / max(cfg.iterations, 1)))
    return lambda step: 1.0


def _rng_state(rng: np.random.Generator):
    return {"numpy": rng.bit_generator.state, "torch": torch.get_rng_state()}


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset, out_dir, resume=None,
          schedule: Callable[[int], float] | None = None, stop_at: int | None = None,
          model_init: dict | None = None) -> TrainResult:
    """Train a model and write checkpoints plus a JSON-lines metric log.

    Args:
        model_cfg: architecture.
        train_cfg: optimisation settings.
        dataset: dataset root (train split is used) or a list of :class:`LoadedClip`.
        out_dir: output directory for ``metrics.jsonl`` and checkpoints.
        resume: checkpoint path to continue from (parameters, optimizer, RNG, step).
        schedule: learning-rate multiplier ``f(step)``; overrides ``lr_schedule``.
        stop_at: stop after this step while keeping the schedule of ``iterations``.
        model_init: optional state dict used to initialize the parameters.

    Returns:
        TrainResult with the final checkpoint path and logged metrics.
    """
    train_cfg.check_model(model_cfg)
    set_deterministic(train_cfg.deterministic)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clips = load_dataset(dataset, model_cfg.scale)
    for c in clips:
        if c.scale != model_cfg.scale:
            raise DataError(f"clip {c.clip_id} has scale {c.scale}, model expects {model_cfg.scale}")
    clips = [subsample_loaded(c, train_cfg.temporal_stride) if train_cfg.temporal_stride > 1 else c
             for c in clips]

    torch.manual_seed(train_cfg.seed)
    model = RealRawVSR(model_cfg).to(train_cfg.device)
    if model_init is not None:
        model.load_state_dict(model_init)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr, betas=train_cfg.betas)
    rng = np.random.default_rng(train_cfg.seed)
    start = 0
    if resume is not None:
        payload = load_checkpoint(resume)
        if ModelConfig.from_dict(payload["model_config"]) != model_cfg:
            raise ValueError("checkpoint model config differs from the requested one")
        model.load_state_dict(payload["state_dict"])
        if "optimizer" in payload:
            optimizer.load_state_dict(payload["optimizer"])
        rng.bit_generator.state = payload["rng"]["numpy"]
        torch.set_rng_state(payload["rng"]["torch"])
        start = int(payload["step"])
        logger.info("resumed from %s at step %d", resume, start)
    schedule = schedule or _schedule(train_cfg)
    end = train_cfg.iterations if stop_at is None else min(stop_at, train_cfg.iterations)

    metrics_path = out / "metrics.jsonl"
    metrics = []
    t0 = time.time()
    model.train()
    step = start
    with open(metrics_path, "a" if resume else "w", encoding="utf-8") as log:
        while step < end:
            lr_now = train_cfg.lr * schedule(step)
            for group in optimizer.param_groups:
                group["lr"] = lr_now
            patches = [sample_patch(clips[int(rng.integers(0, len(clips)))], rng, train_cfg.patch_size,
                                    model_cfg.radius, phase_flip=train_cfg.phase_flip)
                       for _ in range(train_cfg.batch_size)]
            raw, lr_rgb, hr = collate(patches, train_cfg.device)
            output = model(raw, clips[0].phase)
            loss, plain = corrected_loss(output, hr, lr_rgb, train_cfg.color_correction)
            if not torch.isfinite(loss):
                dump = {"step": step, "loss": loss.item(), "raw_range": [float(raw.min()), float(raw.max())],
                        "output_finite": bool(torch.isfinite(output).all()),
                        "origins": [p.origin for p in patches]}
                (out / "nan_dump.json").write_text(json.dumps(dump, indent=2), encoding="utf-8")
                raise TrainingDiverged(f"non-finite loss at step {step}; see {out / 'nan_dump.json'}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            step += 1
            record = {"step": step, "loss": loss.item(), "loss_uncorrected": plain.item(), "lr": lr_now,
                      "wallclock": time.time() - t0}
            metrics.append(record)
            if step % train_cfg.log_interval == 0 or step == end:
                log.write(json.dumps(record) + "\n")
                log.flush()
                logger.info("step %d loss %.5f", step, record["loss"])
            if train_cfg.checkpoint_interval and step % train_cfg.checkpoint_interval == 0 and step < end:
                save_checkpoint(out / f"ckpt_{step:07d}.pt", model, step, optimizer, rng=_rng_state(rng),
                                train_config=train_cfg.to_dict())
    final = save_checkpoint(out / "last.pt", model, step, optimizer, rng=_rng_state(rng),
                            train_config=train_cfg.to_dict())
    return TrainResult(final, metrics, step)
