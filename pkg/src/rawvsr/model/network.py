"""Two-branch raw video super-resolution network."""

from __future__ import annotations

import torch
from torch import nn

from ..rawcore import ShapeError, bayer_sites
from .alignment import BranchAligner, CoAlignment
from .blocks import FeatureExtractor, ResidualBlockNoBN, fold_time, lrelu, make_layer, unfold_time
from .config import ModelConfig
from .fusion import ConcatFusion, Interaction, SKFusion, SubframeUpsample, TemporalFusion


def pack_mosaic(x: torch.Tensor, phase: str = "RGGB") -> torch.Tensor:
    """Pack (..., H, W) mosaics into (..., 4, H/2, W/2) planes ordered R, G1, G2, B."""
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ShapeError(f"mosaic dims must be even, got {tuple(x.shape[-2:])}")
    return torch.stack([x[..., r::2, c::2] for r, c in bayer_sites(phase)], dim=-3)


class Upsampler(nn.Sequential):
    """Pixel-shuffle upsampling; x4 runs as two x2 stages."""

    def __init__(self, scale, num_feat):
        layers = []
        stages = {2: [2], 3: [3], 4: [2, 2]}
        if scale not in stages:
            raise ValueError(f"unsupported scale {scale}")
        for r in stages[scale]:
            layers += [nn.Conv2d(num_feat, r * r * num_feat, 3, 1, 1), nn.PixelShuffle(r),
                       nn.LeakyReLU(0.1, inplace=True)]
        super().__init__(*layers)


class Reconstruction(nn.Module):
    """Residual trunk, upsampling and the two long skips from the raw inputs.

    Skip A maps the reference mosaic (1, H, W) to RGB at sH x sW with one
    pixel shuffle by ``s``; skip B maps the packed reference (4, H/2, W/2)
    with one shuffle by ``2s``.
    """

    def __init__(self, cfg: ModelConfig, skip_bayer=True, skip_subframe=True):
        super().__init__()
        c, s = cfg.channels, cfg.scale
        self.body = make_layer(ResidualBlockNoBN, cfg.n_recon_blocks, num_feat=c)
        self.conv_after_body = nn.Conv2d(c, c, 3, 1, 1)
        self.upsample = Upsampler(s, c)
        self.conv_last = nn.Conv2d(c, 3, 3, 1, 1)
        self.skip_bayer = nn.Sequential(nn.Conv2d(1, 3 * s * s, 3, 1, 1), nn.PixelShuffle(s)) if skip_bayer else None
        self.skip_subframe = (nn.Sequential(nn.Conv2d(4, 3 * 4 * s * s, 3, 1, 1), nn.PixelShuffle(2 * s))
                              if skip_subframe else None)

    def forward(self, feat, ref_bayer=None, ref_sub=None):
        out = self.conv_last(self.upsample(feat + self.conv_after_body(self.body(feat))))
        if self.skip_bayer is not None:
            out = out + self.skip_bayer(ref_bayer)
        if self.skip_subframe is not None:
            out = out + self.skip_subframe(ref_sub)
        return out


class RealRawVSR(nn.Module):
    """Raw video super-resolution from a Bayer branch and a packed sub-frame branch.

    Args:
        cfg: architecture settings; see :class:`ModelConfig`.

    Shape:
        input (B, T, H, W) or (B, T, 1, H, W) normalized mosaics with odd T
        and H, W multiples of ``2 ** cfg.levels``; output (B, 3, sH, sW)
        linear-range sRGB, unclamped.
    """

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        c = cfg.channels
        use_b = cfg.branches in ("both", "bayer")
        use_s = cfg.branches in ("both", "subframe")
        self.extract_bayer = FeatureExtractor(1, c, cfg.n_extract_blocks) if use_b else None
        self.extract_sub = FeatureExtractor(4, c, cfg.n_extract_blocks) if use_s else None

        self.align = None
        if cfg.alignment != "none":
            self.align = CoAlignment(cfg, cfg.alignment) if cfg.branches == "both" else BranchAligner(cfg)
        self.interaction = Interaction(c) if cfg.interaction else None
        self.temporal_bayer = TemporalFusion(c) if use_b else None
        self.temporal_sub = TemporalFusion(c) if use_s else None
        if cfg.branches == "both":
            self.fusion = SKFusion(c, cfg.sk_reduction) if cfg.fusion == "skf" else ConcatFusion(c)
        elif cfg.branches == "subframe":
            self.fusion = SubframeUpsample(c)
        else:
            self.fusion = None
        self.reconstruction = Reconstruction(cfg, skip_bayer=use_b, skip_subframe=use_s)

    def _check_input(self, x):
        if x.dim() == 4:
            x = x.unsqueeze(2)
        if x.dim() != 5 or x.shape[2] != 1:
            raise ShapeError(f"expected (B, T, 1, H, W) mosaics, got {tuple(x.shape)}")
        t, h, w = x.shape[1], x.shape[-2], x.shape[-1]
        if t % 2 == 0:
            raise ShapeError(f"need an odd number of frames, got {t}")
        m = self.cfg.size_multiple
        if h % m or w % m:
            raise ShapeError(f"H, W must be multiples of {m}, got {h}x{w}")
        return x

    def extract(self, x, phase="RGGB"):
        """Per-branch feature stacks (B, T, C, H, W) and (B, T, C, H/2, W/2)."""
        t = x.shape[1]
        feat_b = feat_s = None
        if self.extract_bayer is not None:
            feat_b = unfold_time(self.extract_bayer(fold_time(x)), t)
        if self.extract_sub is not None:
            packed = pack_mosaic(x[:, :, 0], phase)
            feat_s = unfold_time(self.extract_sub(fold_time(packed)), t)
        return feat_b, feat_s

    def forward(self, x, phase: str = "RGGB"):
        x = self._check_input(x)
        ref = x.shape[1] // 2
        feat_b, feat_s = self.extract(x, phase)
        if self.align is not None:
            if self.cfg.branches == "both":
                feat_b, feat_s = self.align(feat_b, feat_s, ref)
            elif feat_b is not None:
                feat_b, _ = self.align(feat_b, ref)
            else:
                feat_s, _ = self.align(feat_s, ref)
        if self.interaction is not None:
            feat_b, feat_s = self.interaction(feat_b, feat_s)
        fused_b = self.temporal_bayer(feat_b, ref) if feat_b is not None else None
        fused_s = self.temporal_sub(feat_s, ref) if feat_s is not None else None
        if self.cfg.branches == "both":
            fused = self.fusion(fused_b, fused_s)
        elif self.cfg.branches == "subframe":
            fused = self.fusion(fused_s)
        else:
            fused = fused_b
        ref_b = x[:, ref]
        ref_s = pack_mosaic(x[:, ref, 0], phase)
        return self.reconstruction(fused, ref_b, ref_s)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


__all__ = ["RealRawVSR", "Reconstruction", "Upsampler", "pack_mosaic", "count_parameters", "lrelu"]
