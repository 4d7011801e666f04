"""Metrics, evaluation, ablations and complexity accounting."""

from .ablation import VARIANTS, AblationTable, AblationVariant, get_variant, match_width, run_ablation
from .complexity import count_params, count_params_flops
from .evaluate import (BicubicBaseline, MetricsReport, config_hash, correct_output, evaluate,
                       super_resolve)
from .metrics import psnr, ssim

__all__ = [
    "VARIANTS", "AblationTable", "AblationVariant", "BicubicBaseline", "MetricsReport", "config_hash",
    "correct_output", "count_params", "count_params_flops", "evaluate", "get_variant", "match_width",
    "psnr", "run_ablation", "ssim", "super_resolve",
]
