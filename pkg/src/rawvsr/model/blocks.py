"""Small building blocks shared by the network modules."""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F


def lrelu(x):
    return F.leaky_relu(x, negative_slope=0.1)


def make_layer(block, n: int, **kwargs) -> nn.Sequential:
    return nn.Sequential(*[block(**kwargs) for _ in range(n)])


class ResidualBlockNoBN(nn.Module):
    """conv-ReLU-conv with an identity shortcut and no normalization.

    Args:
        num_feat: channel number.
        res_scale: residual scale.
    """

    def __init__(self, num_feat=64, res_scale=1.0):
        super().__init__()
        self.res_scale = res_scale
        self.conv1 = nn.Conv2d(num_feat, num_feat, 3, 1, 1)
        self.conv2 = nn.Conv2d(num_feat, num_feat, 3, 1, 1)
        self.relu = nn.ReLU(inplace=True)
        for m in (self.conv1, self.conv2):
            nn.init.kaiming_normal_(m.weight, a=0, mode="fan_in")
            m.weight.data.mul_(0.1)
            nn.init.zeros_(m.bias)

    def forward(self, x):
        return x + self.conv2(self.relu(self.conv1(x))) * self.res_scale


def upsample2x(x):
    """Bilinear x2 upsampling with half-pixel centres."""
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def resize_to(x, size):
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def fold_time(x: torch.Tensor) -> torch.Tensor:
    """(B, T, C, H, W) -> (B*T, C, H, W)."""
    b, t = x.shape[:2]
    return x.reshape(b * t, *x.shape[2:])


def unfold_time(x: torch.Tensor, t: int) -> torch.Tensor:
    return x.reshape(-1, t, *x.shape[1:])


class FeatureExtractor(nn.Module):
    """Input conv followed by residual blocks; one instance per branch."""

    def __init__(self, in_channels, num_feat=64, num_block=5):
        super().__init__()
        self.conv_first = nn.Conv2d(in_channels, num_feat, 3, 1, 1)
        self.body = make_layer(ResidualBlockNoBN, num_block, num_feat=num_feat)

    def forward(self, x):
        return self.body(lrelu(self.conv_first(x)))
