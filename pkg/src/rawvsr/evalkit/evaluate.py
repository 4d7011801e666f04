"""Test-set evaluation with evaluation-time color correction."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .. import synthpipe
from ..errors import DataError
from ..losses import apply_ccm, apply_color_correction, fit_ccm, fit_gains
from ..model import RealRawVSR
from ..resize import imresize
from ..synthpipe import LoadedClip
from .metrics import psnr, ssim

REPORT_COLUMNS = ("clip", "variant", "psnr_db", "ssim", "params_m", "flops_g", "seed", "config_hash")


def config_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha1(blob).hexdigest()[:12]


def center_index(clip: LoadedClip) -> int:
    return len(clip.lr_raw) // 2


@torch.no_grad()
def super_resolve(model: RealRawVSR, clip: LoadedClip, center: int | None = None) -> np.ndarray:
    """Run the network on the ``2N+1`` frames around ``center``; unclamped (3, sH, sW)."""
    r = model.cfg.radius
    center = center_index(clip) if center is None else center
    if center - r < 0 or center + r >= len(clip.lr_raw):
        raise DataError(f"clip {clip.clip_id} lacks {2 * r + 1} frames around index {center}")
    raw = torch.from_numpy(np.ascontiguousarray(clip.lr_raw[center - r:center + r + 1]))[None].float()
    device = next(model.parameters()).device
    was_training = model.training
    model.eval()
    out = model(raw.to(device), clip.phase)[0].cpu().double().numpy()
    model.train(was_training)
    return out


class BicubicBaseline:
    """Bicubic upsampling of the LR sRGB centre frame."""

    def __init__(self, scale: int):
        self.scale = scale

    def __call__(self, clip: LoadedClip, center: int) -> np.ndarray:
        lr = clip.lr_rgb[center].astype(np.float64)
        return imresize(lr, (lr.shape[1] * self.scale, lr.shape[2] * self.scale))


def correct_output(output: np.ndarray, gt: np.ndarray, mode: str = "channel") -> np.ndarray:
    """Fit a colour correction of ``output`` against the ground truth and apply it."""
    if mode == "none":
        return output
    if mode == "channel":
        return apply_color_correction(output, fit_gains(output, gt))
    if mode == "matrix":
        m = fit_ccm(output.reshape(3, -1).T, gt.reshape(3, -1).T)
        return apply_ccm(output, m)
    raise ValueError(f"unknown color correction mode {mode!r}")


@dataclass
class MetricsReport:
    variant: str
    rows: list[dict] = field(default_factory=list)
    psnr_db: float = float("nan")
    ssim: float = float("nan")
    psnr_infinite: bool = False
    params: int | None = None
    flops: int | None = None
    seed: int | None = None
    config_hash: str = ""
    notes: dict = field(default_factory=dict)

    def aggregate(self):
        vals = [r["psnr_db"] for r in self.rows]
        self.psnr_infinite = any(math.isinf(v) for v in vals)
        self.psnr_db = float(np.mean(vals)) if vals else float("nan")
        self.ssim = float(np.mean([r["ssim"] for r in self.rows])) if self.rows else float("nan")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("psnr_db",):
            if math.isinf(d[key]):
                d[key] = "inf"
        for r in d["rows"]:
            if math.isinf(r["psnr_db"]):
                r["psnr_db"] = "inf"
        return d

    def csv_rows(self):
        params_m = None if self.params is None else self.params / 1e6
        flops_g = None if self.flops is None else self.flops / 1e9
        for r in self.rows:
            yield {"clip": r["clip"], "variant": self.variant, "psnr_db": r["psnr_db"], "ssim": r["ssim"],
                   "params_m": params_m, "flops_g": flops_g, "seed": self.seed, "config_hash": self.config_hash}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        with open(out / "report.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            writer.writerows(self.csv_rows())
        return out


def evaluate(predictor, dataset, variant: str = "full", correction: str = "channel", split: str = "test",
             scale: int | None = None, out_dir=None, seed: int | None = None, params: int | None = None,
             flops: int | None = None, hash_parts=()) -> MetricsReport:
    """Score the centre frame of every clip in a split.

    Args:
        predictor: a :class:`RealRawVSR` or ``f(clip, center) -> (3, sH, sW)`` array.
        dataset: dataset root or list of :class:`LoadedClip`.
        variant: label written to the report.
        correction: evaluation-time fit against the ground truth (``channel``,
            ``matrix`` or ``none``) before clamping.
        split: dataset split read from a root.
        scale: scale to load; taken from the model when omitted.
        out_dir: when given, ``report.json`` and ``report.csv`` are written there.

    Returns:
        MetricsReport with per-clip and mean PSNR/SSIM.
    """
    if isinstance(predictor, RealRawVSR):
        model = predictor
        scale = scale or model.cfg.scale
        if scale != model.cfg.scale:
            raise DataError(f"model scale {model.cfg.scale} does not match requested scale {scale}")
        predict: Callable = lambda clip, center: super_resolve(model, clip, center)
        params = params if params is not None else sum(p.numel() for p in model.parameters())
        hash_parts = tuple(hash_parts) or (model.cfg.to_dict(),)
    else:
        predict = predictor
    if isinstance(dataset, (str, Path)):
        if scale is None:
            raise ValueError("scale is required when loading a dataset root")
        clips = synthpipe.load_split(dataset, scale, split)
    else:
        clips = list(dataset)
    if scale is not None:
        for c in clips:
            if c.scale != scale:
                raise DataError(f"clip {c.clip_id} has scale {c.scale}, expected {scale}")
    report = MetricsReport(variant, seed=seed, params=params, flops=flops,
                           config_hash=config_hash(variant, correction, *hash_parts),
                           notes={"metric_space": "RGB in [0, 1], no border crop",
                                  "correction_fit_target": "ground truth", "correction": correction})
    for clip in clips:
        center = center_index(clip)
        gt = clip.hr_rgb[center].astype(np.float64)
        out = np.asarray(predict(clip, center), dtype=np.float64)
        if out.shape != gt.shape:
            raise DataError(f"prediction {out.shape} does not match ground truth {gt.shape} for {clip.clip_id}")
        out = np.clip(correct_output(out, gt, correction), 0.0, 1.0)
        report.rows.append({"clip": clip.clip_id, "psnr_db": psnr(out, gt), "ssim": ssim(out, gt)})
    report.aggregate()
    if out_dir is not None:
        report.write(out_dir)
    return report
