"""Branch interaction, temporal fusion and channel fusion."""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

from .blocks import fold_time, lrelu, resize_to, unfold_time


class Interaction(nn.Module):
    """Exchange aligned features between the branches.

    The Bayer stack is downsampled by a stride-2 conv (+ leaky ReLU) and
    appended to the sub-frame stack; the sub-frame stack is pixel-shuffled x2
    and appended to the Bayer stack. Original entries keep their indices.
    """

    def __init__(self, num_feat=64):
        super().__init__()
        self.down = nn.Conv2d(num_feat, num_feat, 3, 2, 1)
        self.up = nn.Conv2d(num_feat, 4 * num_feat, 3, 1, 1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, aligned_b, aligned_s):
        t = aligned_b.shape[1]
        down = unfold_time(lrelu(self.down(fold_time(aligned_b))), t)
        up = unfold_time(lrelu(self.shuffle(self.up(fold_time(aligned_s)))), t)
        return torch.cat([aligned_b, up], dim=1), torch.cat([aligned_s, down], dim=1)


class NonLocalTemporalAttention(nn.Module):
    """Reference-query attention over the temporal entries.

    Embeddings are 1x1 convs of 4x average-pooled features; for every pooled
    location the reference query attends over all entries (softmax over time)
    and the attended value map is upsampled and added to each entry.
    """

    def __init__(self, num_feat=64, pool=4):
        super().__init__()
        self.pool = pool
        self.query = nn.Conv2d(num_feat, num_feat, 1)
        self.key = nn.Conv2d(num_feat, num_feat, 1)
        self.value = nn.Conv2d(num_feat, num_feat, 1)
        self.last_weights = None

    def attention_weights(self, stack, ref_idx):
        b, t, c, h, w = stack.shape
        pooled = F.avg_pool2d(fold_time(stack), self.pool, ceil_mode=True)
        ph, pw = pooled.shape[-2:]
        pooled = pooled.view(b, t, c, ph, pw)
        q = self.query(pooled[:, ref_idx])
        k = unfold_time(self.key(fold_time(pooled)), t)
        sim = (k * q.unsqueeze(1)).sum(2) / math.sqrt(c)
        return torch.softmax(sim, dim=1), pooled

    def forward(self, stack, ref_idx):
        t = stack.shape[1]
        weights, pooled = self.attention_weights(stack, ref_idx)
        self.last_weights = weights.detach()
        v = unfold_time(self.value(fold_time(pooled)), t)
        att = (weights.unsqueeze(2) * v).sum(1)
        return stack + resize_to(att, stack.shape[-2:]).unsqueeze(1)


class TSAFusion(nn.Module):
    """Temporal then pyramid spatial attention fusion of a feature stack.

    Temporal weights are a softmax over entries of the scaled dot product
    between each entry's embedding and the reference embedding, so the module
    accepts any number of entries. The weighted sum is then modulated by a
    two-level spatial attention map.
    """

    def __init__(self, num_feat=64):
        super().__init__()
        self.emb_ref = nn.Conv2d(num_feat, num_feat, 3, 1, 1)
        self.emb = nn.Conv2d(num_feat, num_feat, 3, 1, 1)
        self.feat_fusion = nn.Conv2d(num_feat, num_feat, 1)

        self.max_pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.avg_pool = nn.AvgPool2d(3, stride=2, padding=1)
        self.spatial_attn1 = nn.Conv2d(num_feat, num_feat, 1)
        self.spatial_attn2 = nn.Conv2d(num_feat * 2, num_feat, 1)
        self.spatial_attn3 = nn.Conv2d(num_feat, num_feat, 3, 1, 1)
        self.spatial_attn4 = nn.Conv2d(num_feat, num_feat, 1)
        self.spatial_attn5 = nn.Conv2d(num_feat, num_feat, 3, 1, 1)
        self.spatial_attn_l1 = nn.Conv2d(num_feat, num_feat, 1)
        self.spatial_attn_l2 = nn.Conv2d(num_feat * 2, num_feat, 3, 1, 1)
        self.spatial_attn_l3 = nn.Conv2d(num_feat, num_feat, 3, 1, 1)
        self.spatial_attn_add1 = nn.Conv2d(num_feat, num_feat, 1)
        self.spatial_attn_add2 = nn.Conv2d(num_feat, num_feat, 1)
        self.last_weights = None

    def temporal_logits(self, stack, ref_idx):
        b, t, c, h, w = stack.shape
        ref = self.emb_ref(stack[:, ref_idx])
        emb = unfold_time(self.emb(fold_time(stack)), t)
        return (emb * ref.unsqueeze(1)).sum(2) / math.sqrt(c)

    @staticmethod
    def temporal_weights(logits):
        return torch.softmax(logits, dim=1)

    def forward(self, stack, ref_idx):
        if not 0 <= ref_idx < stack.shape[1]:
            raise IndexError(f"reference index {ref_idx} outside a stack of {stack.shape[1]}")
        weights = self.temporal_weights(self.temporal_logits(stack, ref_idx))
        self.last_weights = weights.detach()
        feat = lrelu(self.feat_fusion((weights.unsqueeze(2) * stack).sum(1)))
        size = feat.shape[-2:]

        attn = lrelu(self.spatial_attn1(feat))
        attn = lrelu(self.spatial_attn2(torch.cat([self.max_pool(attn), self.avg_pool(attn)], dim=1)))
        attn_level = lrelu(self.spatial_attn_l1(attn))
        attn_level = lrelu(self.spatial_attn_l2(
            torch.cat([self.max_pool(attn_level), self.avg_pool(attn_level)], dim=1)))
        attn_level = lrelu(self.spatial_attn_l3(attn_level))
        attn = lrelu(self.spatial_attn3(attn)) + resize_to(attn_level, attn.shape[-2:])
        attn = lrelu(self.spatial_attn4(attn))
        attn = self.spatial_attn5(resize_to(attn, size))
        attn_add = self.spatial_attn_add2(lrelu(self.spatial_attn_add1(attn)))
        return feat * torch.sigmoid(attn) * 2 + attn_add


class TemporalFusion(nn.Module):
    """Non-local temporal attention followed by TSA fusion."""

    def __init__(self, num_feat=64):
        super().__init__()
        self.nonlocal_attn = NonLocalTemporalAttention(num_feat)
        self.tsa = TSAFusion(num_feat)

    def forward(self, stack, ref_idx):
        return self.tsa(self.nonlocal_attn(stack, ref_idx), ref_idx)


class SubframeUpsample(nn.Module):
    """Bring a half-resolution feature to the Bayer grid by pixel shuffle."""

    def __init__(self, num_feat=64):
        super().__init__()
        self.conv = nn.Conv2d(num_feat, 4 * num_feat, 3, 1, 1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x):
        return lrelu(self.shuffle(self.conv(x)))


class SKFusion(nn.Module):
    """Selective-kernel fusion: per-channel softmax weights across the two branches.

    Args:
        num_feat: channel number.
        reduction: squeeze ratio of the shared descriptor.
    """

    def __init__(self, num_feat=64, reduction=4):
        super().__init__()
        self.up = SubframeUpsample(num_feat)
        self.fc = nn.Linear(num_feat, num_feat // reduction)
        self.fc_b = nn.Linear(num_feat // reduction, num_feat)
        self.fc_s = nn.Linear(num_feat // reduction, num_feat)
        self.last_weights = None

    def branch_weights(self, feat_b, feat_s_up):
        z = F.relu(self.fc((feat_b + feat_s_up).mean(dim=(2, 3))))
        logits = torch.stack([self.fc_b(z), self.fc_s(z)], dim=1)
        return torch.softmax(logits, dim=1)

    def forward(self, feat_b, feat_s):
        feat_s = self.up(feat_s)
        if feat_s.shape != feat_b.shape:
            raise ValueError(f"branch shapes differ after upsampling: {tuple(feat_b.shape)} vs {tuple(feat_s.shape)}")
        w = self.branch_weights(feat_b, feat_s)
        self.last_weights = w.detach()
        return w[:, 0, :, None, None] * feat_b + w[:, 1, :, None, None] * feat_s


class ConcatFusion(nn.Module):
    def __init__(self, num_feat=64):
        super().__init__()
        self.up = SubframeUpsample(num_feat)
        self.conv = nn.Conv2d(2 * num_feat, num_feat, 1)

    def forward(self, feat_b, feat_s):
        return lrelu(self.conv(torch.cat([feat_b, self.up(feat_s)], dim=1)))
