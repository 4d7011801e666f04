"""Pyramidal, cascading deformable alignment for the two branches.

In co-alignment the offsets are predicted once, on the packed sub-frame
branch, and transferred to the Bayer branch (x2 bilinear upsampling of the
field, x2 magnitude). The deformable kernels of each level are one module used
by both branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import fold_time, lrelu, unfold_time, upsample2x
from .config import ModelConfig
from .dcn import ModulatedDeformConv2d


@dataclass
class OffsetField:
    """Offsets (B, 2*K*G, h, w) and modulation (B, K*G, h, w) of one level."""

    offset: torch.Tensor
    mask: torch.Tensor
    logit: torch.Tensor | None = None


def upsample_offsets(offset: torch.Tensor) -> torch.Tensor:
    """Double the grid and the displacement values."""
    return 2.0 * upsample2x(offset)


def derive_bayer_offsets(sub: OffsetField) -> OffsetField:
    """Express a sub-frame offset field on the Bayer grid.

    Offsets are upsampled x2 and magnified x2; the modulation is only
    upsampled.
    """
    return OffsetField(upsample_offsets(sub.offset), upsample2x(sub.mask))


def modulation(logit: torch.Tensor) -> torch.Tensor:
    # 2*sigmoid keeps unit modulation at zero logits
    return 2.0 * torch.sigmoid(logit)


class OffsetPredictor(nn.Module):
    """Predict one level's offsets and modulation from neighbour and reference features.

    The output conv is zero-initialized, so a fresh predictor returns zero
    offsets and unit modulation. A coarser field, when given, is upsampled,
    magnified and added to the prediction.
    """

    def __init__(self, num_feat, deform_groups, kernel_size=3):
        super().__init__()
        k = kernel_size ** 2
        self.n_offset = 2 * k * deform_groups
        self.conv1 = nn.Conv2d(2 * num_feat, num_feat, 3, 1, 1)
        self.conv2 = nn.Conv2d(num_feat, num_feat, 3, 1, 1)
        self.head = nn.Conv2d(num_feat, 3 * k * deform_groups, 3, 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, nbr, ref, coarser: OffsetField | None = None) -> OffsetField:
        if nbr.shape != ref.shape:
            raise ValueError(f"neighbour {tuple(nbr.shape)} and reference {tuple(ref.shape)} differ")
        feat = lrelu(self.conv2(lrelu(self.conv1(torch.cat([nbr, ref], dim=1)))))
        out = self.head(feat)
        offset, logit = out[:, :self.n_offset], out[:, self.n_offset:]
        if coarser is not None:
            offset = offset + upsample_offsets(coarser.offset)
            logit = logit + upsample2x(coarser.logit)
        return OffsetField(offset, modulation(logit), logit)


class BranchAligner(nn.Module):
    """Feature pyramid, per-level deformable alignment and cascade for one branch.

    Args:
        cfg: model configuration.
        predict: own offset predictors; otherwise fields are supplied by the caller.
        shared: aligner whose deformable kernels are reused instead of owning new ones.
    """

    def __init__(self, cfg: ModelConfig, predict=True, shared: "BranchAligner | None" = None):
        super().__init__()
        c, g, n_levels = cfg.channels, cfg.deform_groups, cfg.levels
        self.n_levels = n_levels
        self.down = nn.ModuleList([
            nn.Sequential(nn.Conv2d(c, c, 3, 2, 1), nn.LeakyReLU(0.1, inplace=True),
                          nn.Conv2d(c, c, 3, 1, 1), nn.LeakyReLU(0.1, inplace=True))
            for _ in range(n_levels - 1)])
        if predict:
            self.offsets = nn.ModuleList([OffsetPredictor(c, g, cfg.kernel_size) for _ in range(n_levels)])
            self.cas_offsets = OffsetPredictor(c, g, cfg.kernel_size)
        else:
            self.offsets = None
            self.cas_offsets = None
        if shared is None:
            self.dcn = nn.ModuleList([ModulatedDeformConv2d(c, c, cfg.kernel_size, g) for _ in range(n_levels)])
            self.cas_dcn = ModulatedDeformConv2d(c, c, cfg.kernel_size, g)
            self._shared = None
        else:
            # kept out of the module tree so each parameter has a single owner
            self._shared = [shared]
        # g of the level equations: concatenate with the upsampled coarser result, then conv
        self.fuse = nn.ModuleList([nn.Conv2d(2 * c, c, 3, 1, 1) for _ in range(n_levels - 1)])

    def level_dcn(self, level: int) -> ModulatedDeformConv2d:
        """Deformable conv of pyramid level ``level`` (0 = finest)."""
        owner = self._shared[0] if self._shared else self
        return owner.dcn[level]

    def cascade_dcn(self) -> ModulatedDeformConv2d:
        owner = self._shared[0] if self._shared else self
        return owner.cas_dcn

    def pyramid(self, feat):
        pyr = [feat]
        for down in self.down:
            pyr.append(down(pyr[-1]))
        return pyr

    def forward(self, feat, ref_idx: int, fields=None):
        """Align every entry of ``feat`` (B, T, C, h, w) to entry ``ref_idx``.

        Args:
            feat: stacked features.
            ref_idx: index of the reference entry.
            fields: optional per-level :class:`OffsetField` list (finest first) plus
                a trailing cascade field; predicted when omitted.

        Returns:
            tuple: aligned (B, T, C, h, w) stack and the fields used.
        """
        b, t = feat.shape[:2]
        pyr = self.pyramid(fold_time(feat))
        refs = [unfold_time(p, t)[:, ref_idx:ref_idx + 1].expand(-1, t, -1, -1, -1) for p in pyr]
        refs = [fold_time(r.contiguous()) for r in refs]
        if fields is None and self.offsets is None:
            raise ValueError("this aligner has no offset predictors; pass fields")
        used = [None] * self.n_levels
        aligned = None
        coarser = None
        for level in range(self.n_levels - 1, -1, -1):
            field = fields[level] if fields is not None else self.offsets[level](pyr[level], refs[level], coarser)
            used[level] = coarser = field
            out = self.level_dcn(level)(pyr[level], field.offset, field.mask)
            if aligned is None:
                aligned = lrelu(out)
            else:
                out = self.fuse[level](torch.cat([out, upsample2x(aligned)], dim=1))
                aligned = lrelu(out) if level > 0 else out
        cas = fields[-1] if fields is not None else self.cas_offsets(aligned, refs[0])
        aligned = lrelu(self.cascade_dcn()(aligned, cas.offset, cas.mask))
        return unfold_time(aligned, t), used + [cas]


class CoAlignment(nn.Module):
    """Align the Bayer and sub-frame stacks.

    ``mode='co'`` predicts offsets on the sub-frame branch only and reuses the
    same deformable kernels for the Bayer branch; ``mode='sep'`` gives each
    branch its own offsets and kernels.

    Setting ``record_offsets`` stores every level's fields in ``offset_trace``
    during the forward pass.
    """

    def __init__(self, cfg: ModelConfig, mode="co"):
        super().__init__()
        if mode not in ("co", "sep"):
            raise ValueError(f"unknown alignment mode {mode!r}")
        self.mode = mode
        self.sub = BranchAligner(cfg)
        if mode == "co":
            self.bayer = BranchAligner(cfg, predict=False, shared=self.sub)
        else:
            self.bayer = BranchAligner(cfg)
        self.record_offsets = False
        self.offset_trace: list[dict] = []

    def forward(self, feat_b, feat_s, ref_idx: int):
        aligned_s, sub_fields = self.sub(feat_s, ref_idx)
        if self.mode == "co":
            bayer_fields = [derive_bayer_offsets(f) for f in sub_fields]
            aligned_b, _ = self.bayer(feat_b, ref_idx, bayer_fields)
        else:
            aligned_b, bayer_fields = self.bayer(feat_b, ref_idx)
        if self.record_offsets:
            names = list(range(1, len(sub_fields))) + ["cascade"]
            self.offset_trace = [
                {"level": name, "sub_offset": s.offset.detach().clone(), "sub_mask": s.mask.detach().clone(),
                 "bayer_offset": bf.offset.detach().clone(), "bayer_mask": bf.mask.detach().clone()}
                for name, s, bf in zip(names, sub_fields, bayer_fields)]
        return aligned_b, aligned_s
