"""Parameter and multiply-accumulate accounting.

Operation counts are gathered with forward hooks during a pass on the
``meta`` device, so no memory is allocated for activations. Costs are
multiply-accumulates (MACs), the convention behind most published "FLOPs"
figures for super-resolution networks.
"""

from __future__ import annotations

import torch
from torch import nn

from ..model import ModelConfig, ModulatedDeformConv2d, RealRawVSR
from ..model.fusion import NonLocalTemporalAttention, TSAFusion


def conv_macs(module: nn.Conv2d, out: torch.Tensor) -> int:
    kh, kw = module.kernel_size
    cin = module.in_channels // module.groups
    return int(out.numel() * cin * kh * kw)


def dcn_macs(module: ModulatedDeformConv2d, out: torch.Tensor) -> int:
    k = module.kernel_size ** 2
    b, cout, ho, wo = out.shape
    sampling = b * module.in_channels * k * ho * wo * 5   # 4 bilinear taps + modulation
    return int(out.numel() * module.in_channels * k + sampling)


def attention_macs(module, inputs, out) -> int:
    stack = inputs[0]
    b, t, c, h, w = stack.shape
    if isinstance(module, NonLocalTemporalAttention):
        p = module.pool
        h, w = -(-h // p), -(-w // p)
    return int(2 * b * t * c * h * w)     # similarities + weighted sum


class MacCounter:
    def __init__(self, model: nn.Module):
        self.total = 0
        self.by_type: dict[str, int] = {}
        self.handles = []
        for m in model.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear, ModulatedDeformConv2d, NonLocalTemporalAttention, TSAFusion)):
                self.handles.append(m.register_forward_hook(self._hook))

    def _hook(self, module, inputs, out):
        if isinstance(module, nn.Conv2d):
            n = conv_macs(module, out)
        elif isinstance(module, nn.Linear):
            n = int(out.numel() * module.in_features)
        elif isinstance(module, ModulatedDeformConv2d):
            n = dcn_macs(module, out)
        else:
            n = attention_macs(module, inputs, out)
        name = type(module).__name__
        self.by_type[name] = self.by_type.get(name, 0) + n
        self.total += n

    def remove(self):
        for h in self.handles:
            h.remove()


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def count_params_flops(model_cfg: ModelConfig, input_size=(160, 360), n_frames: int | None = None,
                       breakdown: bool = False):
    """Exact parameter count and MACs of one forward pass.

    Args:
        model_cfg: architecture.
        input_size: (H, W) of the LR mosaic.
        n_frames: frames per clip, ``2N+1`` by default.
        breakdown: also return MACs per module type.

    Returns:
        tuple: ``(params, macs)`` or ``(params, macs, by_type)``.
    """
    n_frames = n_frames or model_cfg.n_frames
    with torch.device("meta"):
        model = RealRawVSR(model_cfg)
        x = torch.empty(1, n_frames, 1, *input_size)
    params = count_params(model)
    for m in model.modules():
        if isinstance(m, ModulatedDeformConv2d):
            m.backend = "gather"
    counter = MacCounter(model)
    with torch.no_grad():
        model(x)
    counter.remove()
    if breakdown:
        return params, counter.total, dict(counter.by_type)
    return params, counter.total
