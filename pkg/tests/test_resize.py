import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from rawvsr.resize import downsample, imresize, resize_matrix, upsample


def _pil_bicubic(a, hw):
    return np.asarray(Image.fromarray(a.astype(np.float32), mode="F").resize((hw[1], hw[0]), Image.BICUBIC))


@pytest.mark.parametrize("out_hw", [(20, 24), (80, 96), (60, 72), (27, 33)])
def test_interior_matches_pillow_bicubic(out_hw):
    # Pillow uses the same a=-0.5 kernel and support scaling; only border handling differs
    a = np.random.default_rng(0).random((40, 48)).astype(np.float32)
    ours = imresize(a, out_hw)
    ref = _pil_bicubic(a, out_hw)
    m = int(np.ceil(3 * max(40 / out_hw[0], 48 / out_hw[1], 1)))
    np.testing.assert_allclose(ours[m:-m, m:-m], ref[m:-m, m:-m], atol=2e-6)


@given(n_in=st.integers(2, 40), n_out=st.integers(1, 80))
@settings(max_examples=50, deadline=None)
def test_rows_sum_to_one(n_in, n_out):
    mat = resize_matrix(n_in, n_out)
    np.testing.assert_allclose(mat.sum(axis=1), 1.0, atol=1e-12)


def test_constant_preserved_and_identity():
    a = np.full((3, 12, 16), 0.37)
    np.testing.assert_allclose(imresize(a, (7, 9)), 0.37, atol=1e-12)
    b = np.random.default_rng(1).random((5, 6))
    np.testing.assert_allclose(imresize(b, (5, 6)), b, atol=1e-12)


def test_numpy_and_torch_agree():
    a = np.random.default_rng(2).random((2, 3, 16, 24))
    np.testing.assert_allclose(imresize(torch.from_numpy(a), (8, 12)).numpy(), imresize(a, (8, 12)), atol=1e-12)


def test_factor_helpers():
    a = np.random.default_rng(3).random((3, 12, 18))
    assert downsample(a, 3).shape == (3, 4, 6)
    assert upsample(a, 2).shape == (3, 24, 36)
    with pytest.raises(ValueError):
        downsample(a, 5)
