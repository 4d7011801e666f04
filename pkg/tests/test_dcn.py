import numpy as np
import pytest
import torch

from helpers import brute_force_dcn
from rawvsr.model import ModulatedDeformConv2d, deform_conv2d, default_backend
from rawvsr.model.dcn import conv_equivalent

BACKENDS = ["gather", "grid", "torchvision"]


def _int_tensor(gen, shape, lo=-4, hi=5):
    return torch.randint(lo, hi, shape, generator=gen).double()


@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_offset_unit_mask_is_plain_conv(backend):
    torch.manual_seed(0)
    dcn = ModulatedDeformConv2d(8, 6, 3, deform_groups=2, backend=backend)
    x = torch.randn(2, 8, 10, 12)
    off = torch.zeros(2, dcn.offset_channels, 10, 12)
    mask = torch.ones(2, dcn.offset_channels // 2, 10, 12)
    assert (dcn(x, off, mask) - conv_equivalent(x, dcn)).abs().max() < 1e-5


@pytest.mark.parametrize("backend", BACKENDS)
def test_integer_offsets_match_brute_force(backend):
    gen = torch.Generator().manual_seed(1)
    x = _int_tensor(gen, (1, 4, 8, 8))
    w = _int_tensor(gen, (3, 4, 3, 3), -2, 3)
    off = _int_tensor(gen, (1, 2 * 9 * 2, 8, 8), -2, 3)
    mask = torch.randint(0, 3, (1, 9 * 2, 8, 8), generator=gen).double() * 0.5
    out = deform_conv2d(x, off, w, None, mask, 1, backend).numpy()
    ref = brute_force_dcn(x, off, w, mask)
    if backend == "grid":
        # grid_sample normalizes coordinates, which costs a few ulps
        np.testing.assert_allclose(out[..., 1:-1, 1:-1], ref[..., 1:-1, 1:-1], atol=1e-9)
    else:
        np.testing.assert_array_equal(out[..., 1:-1, 1:-1], ref[..., 1:-1, 1:-1])


def test_fractional_offsets_agree_across_backends():
    torch.manual_seed(2)
    x = torch.randn(2, 8, 9, 11, dtype=torch.float64)
    w = torch.randn(5, 8, 3, 3, dtype=torch.float64)
    b = torch.randn(5, dtype=torch.float64)
    off = torch.randn(2, 2 * 9 * 4, 9, 11, dtype=torch.float64) * 2.5
    mask = torch.rand(2, 9 * 4, 9, 11, dtype=torch.float64)
    ref = deform_conv2d(x, off, w, b, mask, 1, "torchvision")
    for be in ("gather", "grid"):
        assert (deform_conv2d(x, off, w, b, mask, 1, be) - ref).abs().max() < 1e-10


def test_backend_gradients_agree():
    torch.manual_seed(3)
    grads = {}
    for be in BACKENDS:
        x = torch.randn(1, 4, 7, 7, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        x.requires_grad_(True)
        g = torch.Generator().manual_seed(1)
        off = (torch.randn(1, 18, 7, 7, dtype=torch.float64, generator=g) * 1.3).requires_grad_(True)
        mask = torch.rand(1, 9, 7, 7, dtype=torch.float64, generator=g).requires_grad_(True)
        w = torch.randn(2, 4, 3, 3, dtype=torch.float64, generator=g).requires_grad_(True)
        deform_conv2d(x, off, w, None, mask, 1, be).square().sum().backward()
        grads[be] = [t.grad for t in (x, off, mask, w)]
    for be in ("gather", "grid"):
        for a, b in zip(grads[be], grads["torchvision"]):
            assert (a - b).abs().max() < 1e-8


def test_shape_checks():
    dcn = ModulatedDeformConv2d(4, 4, 3, deform_groups=2)
    x = torch.randn(1, 4, 6, 6)
    with pytest.raises(ValueError):
        dcn(x, torch.zeros(1, 18, 6, 6), torch.ones(1, 9, 6, 6))
    with pytest.raises(ValueError):
        ModulatedDeformConv2d(6, 4, 3, deform_groups=4)


def test_backend_env(monkeypatch):
    assert default_backend(torch.device("cpu")) == "grid"
    monkeypatch.setenv("RAWVSR_DCN_BACKEND", "gather")
    assert default_backend() == "gather"
    monkeypatch.setenv("RAWVSR_DCN_BACKEND", "bogus")
    with pytest.raises(ValueError):
        default_backend()
