"""Ablation variants and a harness that trains and scores them under one seed."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from ..model import ModelConfig, RealRawVSR, model_from_checkpoint
from ..trainer import TrainConfig, load_dataset, train
from .complexity import count_params, count_params_flops
from .evaluate import config_hash, evaluate

logger = logging.getLogger(__name__)

PARAM_TOLERANCE = 0.05
TABLE_COLUMNS = ("variant", "psnr_db", "ssim", "params", "params_rel_full", "flops", "channels",
                 "deform_groups", "train_correction", "eval_correction", "final_loss", "seed", "config_hash")


@dataclass(frozen=True)
class AblationVariant:
    """One row of the ablation table.

    Args:
        id: variant name.
        overrides: ModelConfig fields changed relative to the full model.
        train_correction: color correction inside the training loss.
        eval_correction: color correction applied before the metrics.
        widen: search a wider feature width so the parameter count matches the full model.
    """

    id: str
    overrides: dict = field(default_factory=dict)
    train_correction: str = "channel"
    eval_correction: str = "channel"
    widen: bool = False

    def model_config(self, base: ModelConfig) -> ModelConfig:
        cfg = base.replace(**self.overrides)
        return match_width(cfg, base) if self.widen else cfg


_SINGLE = {"alignment": "sep", "interaction": False, "sk_reduction": 1}

VARIANTS: dict[str, AblationVariant] = {v.id: v for v in (
    AblationVariant("full"),
    AblationVariant("sep_align", {"alignment": "sep"}),
    AblationVariant("no_align", {"alignment": "none"}),
    AblationVariant("no_interaction", {"interaction": False}),
    AblationVariant("concat_fusion", {"fusion": "concat"}),
    AblationVariant("no_color_corr", train_correction="none", eval_correction="none"),
    AblationVariant("matrix_color_corr", train_correction="matrix"),
    AblationVariant("bayer_only", {**_SINGLE, "branches": "bayer"}, widen=True),
    AblationVariant("subframe_only", {**_SINGLE, "branches": "subframe"}, widen=True),
)}


def get_variant(variant_id: str) -> AblationVariant:
    if variant_id not in VARIANTS:
        raise ValueError(f"unknown ablation variant {variant_id!r}; expected one of {sorted(VARIANTS)}")
    return VARIANTS[variant_id]


def _params(cfg: ModelConfig) -> int:
    with torch.device("meta"):
        return count_params(RealRawVSR(cfg))


def match_width(cfg: ModelConfig, reference: ModelConfig, tolerance: float = PARAM_TOLERANCE,
                max_factor: int = 4) -> ModelConfig:
    """Widen ``cfg`` until its parameter count is closest to ``reference``.

    Widths and deformable group counts (divisors of the width, at most the
    reference group count) are searched jointly. Among candidates within
    ``tolerance`` the one with the most groups wins, then the closest count.

    Raises:
        ValueError: when no width lands within ``tolerance``.
    """
    target = _params(reference)
    found = []
    for c in range(2, max_factor * reference.channels + 1):
        if c % cfg.sk_reduction:
            continue
        smallest = None
        for g in sorted((d for d in range(1, reference.deform_groups + 1) if c % d == 0), reverse=True):
            cand = cfg.replace(channels=c, deform_groups=g)
            p = _params(cand)
            smallest = p if smallest is None else min(smallest, p)
            found.append((abs(p - target) / target, g, cand))
        if smallest > target * (1 + tolerance):
            break
    inside = [f for f in found if f[0] <= tolerance]
    if not inside:
        raise ValueError(f"no width for {cfg.branches} within {tolerance:.0%} of {target} parameters")
    return min(inside, key=lambda f: (-f[1], f[0]))[2]


@dataclass
class AblationTable:
    rows: list[dict] = field(default_factory=list)
    seed: int = 0

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps({"seed": self.seed, "rows": self.rows}, indent=2),
                                           encoding="utf-8")
        with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=TABLE_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(self.rows)
        return out

    def row(self, variant_id: str) -> dict:
        for r in self.rows:
            if r["variant"] == variant_id:
                return r
        raise KeyError(variant_id)


def _split(dataset, scale):
    if isinstance(dataset, dict):
        return list(dataset["train"]), list(dataset["test"])
    return load_dataset(dataset, scale, "train"), load_dataset(dataset, scale, "test")


def run_ablation(variants, dataset, train_cfg: TrainConfig, base_cfg: ModelConfig, out_dir) -> AblationTable:
    """Train and evaluate each variant with the same seed and budget.

    Args:
        variants: variant ids (or :class:`AblationVariant` objects).
        dataset: dataset root with train/test splits, or ``{"train": clips, "test": clips}``.
        train_cfg: shared optimisation settings; its correction mode is set per variant.
        base_cfg: the full model; must use both branches.
        out_dir: receives ``ablation.csv``, ``ablation.json`` and one folder per variant.

    Returns:
        AblationTable with one row per variant.
    """
    if base_cfg.branches != "both":
        raise ValueError("the ablation base model must use both branches")
    chosen = [v if isinstance(v, AblationVariant) else get_variant(v) for v in variants]
    ids = [v.id for v in chosen]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate variants in {ids}")
    train_clips, test_clips = _split(dataset, base_cfg.scale)
    out = Path(out_dir)
    full_params = _params(base_cfg)
    lr_size = tuple(test_clips[0].lr_raw.shape[-2:])
    table = AblationTable(seed=train_cfg.seed)
    for v in chosen:
        cfg = v.model_config(base_cfg)
        tcfg = replace(train_cfg, color_correction=v.train_correction)
        logger.info("ablation %s: %s", v.id, cfg)
        result = train(cfg, tcfg, train_clips, out / v.id)
        model, _ = model_from_checkpoint(result.checkpoint)
        params, flops = count_params_flops(cfg, input_size=lr_size)
        report = evaluate(model, test_clips, variant=v.id, correction=v.eval_correction, seed=tcfg.seed,
                          params=params, flops=flops, out_dir=out / v.id,
                          hash_parts=(cfg.to_dict(), tcfg.to_dict()))
        table.rows.append({
            "variant": v.id, "psnr_db": report.psnr_db, "ssim": report.ssim, "params": params,
            "params_rel_full": params / full_params, "flops": flops, "channels": cfg.channels,
            "deform_groups": cfg.deform_groups, "train_correction": v.train_correction,
            "eval_correction": v.eval_correction,
            "final_loss": result.metrics[-1]["loss"] if result.metrics else None,
            "seed": tcfg.seed, "config_hash": config_hash(v.id, cfg.to_dict(), tcfg.to_dict()),
        })
    table.write(out)
    return table
