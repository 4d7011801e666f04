"""Network definition, deformable convolution and checkpoints."""

from .alignment import (BranchAligner, CoAlignment, OffsetField, OffsetPredictor, derive_bayer_offsets,
                        modulation, upsample_offsets)
from .config import ModelConfig
from .dcn import (ModulatedDeformConv2d, deform_conv2d, deform_conv2d_grid, deform_conv2d_torch,
                  default_backend)
from .fusion import (ConcatFusion, Interaction, NonLocalTemporalAttention, SKFusion, TemporalFusion,
                     TSAFusion)
from .network import RealRawVSR, Reconstruction, count_parameters, pack_mosaic

__all__ = [
    "BranchAligner", "CoAlignment", "OffsetField", "OffsetPredictor", "derive_bayer_offsets", "modulation",
    "upsample_offsets", "ModelConfig", "ModulatedDeformConv2d", "deform_conv2d", "deform_conv2d_grid", "deform_conv2d_torch",
    "default_backend", "ConcatFusion", "Interaction", "NonLocalTemporalAttention", "SKFusion",
    "TemporalFusion", "TSAFusion", "RealRawVSR", "Reconstruction", "count_parameters", "pack_mosaic",
]

from .checkpoint import CKPT_FORMAT, CheckpointError, load_checkpoint, model_from_checkpoint, save_checkpoint

__all__ += ["CKPT_FORMAT", "CheckpointError", "load_checkpoint", "model_from_checkpoint", "save_checkpoint"]
