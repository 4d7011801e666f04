"""Modulated deformable convolution with interchangeable back ends.

* ``torchvision``: the compiled ``torchvision.ops.deform_conv2d`` kernel.
* ``gather``: pure torch with explicit bilinear gathers; with integer offsets
  its sampling weights are exactly 0 or 1, so it is the reference for oracle
  tests.
* ``grid``: pure torch built on ``grid_sample``; the fastest on CPU.

``auto`` picks ``torchvision`` for CUDA tensors and ``grid`` otherwise. Set
``RAWVSR_DCN_BACKEND`` or pass ``backend=`` to override.

Offsets follow the torchvision layout: channel ``2 * (g * K + k)`` holds the
vertical and ``2 * (g * K + k) + 1`` the horizontal displacement of tap ``k``
in deformable group ``g``.
"""

from __future__ import annotations

import math
import os

import torch
from torch import nn
from torch.nn import functional as F

try:
    from torchvision.ops import deform_conv2d as _tv_deform_conv2d
except ImportError:  # pragma: no cover - torchvision is a declared dependency
    _tv_deform_conv2d = None

BACKENDS = ("torchvision", "gather", "grid")


def default_backend(device: torch.device | None = None) -> str:
    name = os.environ.get("RAWVSR_DCN_BACKEND", "auto").lower()
    if name == "auto":
        on_cuda = device is not None and torch.device(device).type == "cuda"
        return "torchvision" if on_cuda and _tv_deform_conv2d is not None else "grid"
    if name not in BACKENDS:
        raise ValueError(f"unknown RAWVSR_DCN_BACKEND {name!r}; expected auto or one of {BACKENDS}")
    if name == "torchvision" and _tv_deform_conv2d is None:
        raise RuntimeError("torchvision deform_conv2d is unavailable")
    return name


def _bilinear_gather(x, py, px):
    """Sample ``x`` (B, G, Cg, H, W) at float positions (B, G, K, H, W), zero outside."""
    b, g, cg, h, w = x.shape
    k = py.shape[2]
    y0 = torch.floor(py)
    x0 = torch.floor(px)
    wy1 = py - y0
    wx1 = px - x0
    wy0 = 1 - wy1
    wx0 = 1 - wx1
    flat = x.reshape(b, g, cg, h * w)
    out = 0
    for dy, wy in ((0, wy0), (1, wy1)):
        for dx, wx in ((0, wx0), (1, wx1)):
            yy = y0 + dy
            xx = x0 + dx
            inside = (yy >= 0) & (yy <= h - 1) & (xx >= 0) & (xx <= w - 1)
            idx = (yy.clamp(0, h - 1) * w + xx.clamp(0, w - 1)).long()
            idx = idx.reshape(b, g, 1, -1).expand(b, g, cg, idx[0, 0].numel())
            vals = torch.gather(flat, 3, idx).reshape(b, g, cg, k, *py.shape[-2:])
            wgt = (wy * wx * inside.to(x.dtype)).unsqueeze(2)
            out = out + vals * wgt
    return out


def deform_conv2d_torch(x, offset, weight, bias=None, mask=None, padding: int = 1):
    """Reference modulated deformable convolution (stride 1, dilation 1)."""
    _check_shapes(x, offset, weight)
    b, cin, h, w = x.shape
    kh, kw = weight.shape[-2:]
    py, px, groups, ho, wo = _sampling_positions(x, offset, kh, kw, padding)
    cols = _bilinear_gather(x.reshape(b, groups, cin // groups, h, w), py, px)
    if mask is not None:
        cols = cols * mask.reshape(b, groups, 1, kh * kw, ho, wo)
    return _columns_to_output(cols, weight, bias, b, ho, wo)


def _sampling_positions(x, offset, kh, kw, padding):
    b, _, h, w = x.shape
    k = kh * kw
    groups = offset.shape[1] // (2 * k)
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    off = offset.reshape(b, groups, k, 2, ho, wo)
    ky, kx = torch.meshgrid(torch.arange(kh, dtype=x.dtype, device=x.device),
                            torch.arange(kw, dtype=x.dtype, device=x.device), indexing="ij")
    base_y = torch.arange(ho, dtype=x.dtype, device=x.device).view(1, 1, 1, ho, 1) - padding
    base_x = torch.arange(wo, dtype=x.dtype, device=x.device).view(1, 1, 1, 1, wo) - padding
    py = base_y + ky.reshape(1, 1, k, 1, 1) + off[:, :, :, 0]
    px = base_x + kx.reshape(1, 1, k, 1, 1) + off[:, :, :, 1]
    return py, px, groups, ho, wo


def _check_shapes(x, offset, weight):
    cin = x.shape[1]
    cout, cin_w, kh, kw = weight.shape
    k = kh * kw
    groups = offset.shape[1] // (2 * k)
    if cin_w != cin or groups == 0 or cin % groups or offset.shape[1] != 2 * k * groups:
        raise ValueError(f"inconsistent deformable conv shapes: x {tuple(x.shape)}, "
                         f"offset {tuple(offset.shape)}, weight {tuple(weight.shape)}")


def _columns_to_output(cols, weight, bias, b, ho, wo):
    cout = weight.shape[0]
    out = torch.matmul(weight.reshape(cout, -1), cols.reshape(b, -1, ho * wo)).reshape(b, cout, ho, wo)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


def deform_conv2d_grid(x, offset, weight, bias=None, mask=None, padding: int = 1):
    """Modulated deformable convolution sampling through ``grid_sample``."""
    _check_shapes(x, offset, weight)
    b, cin, h, w = x.shape
    kh, kw = weight.shape[-2:]
    py, px, groups, ho, wo = _sampling_positions(x, offset, kh, kw, padding)
    k = kh * kw
    # align_corners=True maps -1/+1 onto the first/last pixel centres
    gx = px * (2.0 / max(w - 1, 1)) - 1.0
    gy = py * (2.0 / max(h - 1, 1)) - 1.0
    grid = torch.stack([gx, gy], dim=-1).reshape(b * groups, k * ho, wo, 2)
    cols = F.grid_sample(x.reshape(b * groups, cin // groups, h, w), grid, mode="bilinear",
                         padding_mode="zeros", align_corners=True)
    cols = cols.reshape(b, groups, cin // groups, k, ho, wo)
    if mask is not None:
        cols = cols * mask.reshape(b, groups, 1, k, ho, wo)
    return _columns_to_output(cols, weight, bias, b, ho, wo)


def deform_conv2d(x, offset, weight, bias=None, mask=None, padding: int = 1, backend: str | None = None):
    backend = backend or default_backend(x.device)
    if backend == "torchvision":
        return _tv_deform_conv2d(x, offset, weight, bias, padding=padding, mask=mask)
    if backend == "gather":
        return deform_conv2d_torch(x, offset, weight, bias, mask, padding)
    if backend == "grid":
        return deform_conv2d_grid(x, offset, weight, bias, mask, padding)
    raise ValueError(f"unknown deformable conv backend {backend!r}")


class ModulatedDeformConv2d(nn.Module):
    """3x3 modulated deformable convolution taking externally predicted offsets.

    Args:
        in_channels: input channels, divisible by ``deform_groups``.
        out_channels: output channels.
        kernel_size: square kernel size.
        deform_groups: number of offset groups.
        backend: force a back end; ``None`` resolves :func:`default_backend` per call.
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, deform_groups=1, bias=True, backend=None):
        super().__init__()
        if in_channels % deform_groups:
            raise ValueError(f"in_channels {in_channels} not divisible by deform_groups {deform_groups}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.deform_groups = deform_groups
        self.padding = kernel_size // 2
        self.backend = backend
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

    @property
    def offset_channels(self) -> int:
        return 2 * self.kernel_size ** 2 * self.deform_groups

    def forward(self, x, offset, mask):
        if offset.shape[1] != self.offset_channels or mask.shape[1] != self.offset_channels // 2:
            raise ValueError(f"expected {self.offset_channels} offset and {self.offset_channels // 2} "
                             f"mask channels, got {offset.shape[1]} and {mask.shape[1]}")
        return deform_conv2d(x, offset, self.weight, self.bias, mask, self.padding, self.backend)

    def extra_repr(self):
        return (f"{self.in_channels}, {self.out_channels}, kernel_size={self.kernel_size}, "
                f"deform_groups={self.deform_groups}")


def conv_equivalent(x, dcn: ModulatedDeformConv2d):
    """Plain convolution with the same weights (zero offsets, unit modulation)."""
    return F.conv2d(x, dcn.weight, dcn.bias, padding=dcn.padding)
