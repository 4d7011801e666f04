import numpy as np
import pytest
import skimage.data
from hypothesis import given, settings
from hypothesis import strategies as st

from rawvsr import rawcore
from rawvsr.alignkit import (AlignConfig, Correspondences, FlowField, Homography, align_pair, dense_flow,
                             estimate_homography, fit_dlt, match_corners, rescale_for_subframe,
                             reprojection_error, warp_flow, warp_image)
from rawvsr.errors import DataError, EstimationError
from rawvsr.rawcore import RawBayerFrame
from rawvsr.resize import downsample


def _random_homography(rng, jitter=0.05):
    m = np.eye(3) + rng.normal(0, jitter, (3, 3)) * np.array([[1, 1, 40], [1, 1, 40], [0.002, 0.002, 0]])
    m[2, 2] = 1.0
    return m


def _texture(size=96, seed=0):
    img = skimage.data.astronaut()[100:100 + size, 150:150 + size].astype(np.float64) / 255.0
    return img.transpose(2, 0, 1)


# --- homography ------------------------------------------------------------

def test_dlt_exact_on_four_points():
    rng = np.random.default_rng(0)
    h = _random_homography(rng)
    src = np.array([[0, 0], [100, 0], [100, 80], [0, 80]], dtype=float)
    dst = Homography(h).apply(src)
    np.testing.assert_allclose(fit_dlt(src, dst), h / h[2, 2], atol=1e-10)


def test_ransac_with_outliers_recovers_homography():
    rng = np.random.default_rng(1)
    h = _random_homography(rng)
    src = rng.uniform(0, 200, (200, 2))
    dst = Homography(h).apply(src)
    bad = rng.choice(200, 60, replace=False)
    dst[bad] += rng.uniform(20, 60, (60, 2)) * rng.choice([-1, 1], (60, 2))
    est, mask = estimate_homography(Correspondences(src, dst), seed=3)
    good = np.setdiff1d(np.arange(200), bad)
    assert mask[good].all() and not mask[bad].any()
    assert reprojection_error(est.matrix, src[good], dst[good]).max() < 1e-6


def test_ransac_is_seeded():
    rng = np.random.default_rng(2)
    src = rng.uniform(0, 100, (50, 2))
    dst = src + rng.normal(0, 0.5, src.shape)
    a = estimate_homography((src, dst), seed=5)[0].matrix
    b = estimate_homography((src, dst), seed=5)[0].matrix
    np.testing.assert_array_equal(a, b)


def test_similarity_prenormalization_invariance():
    rng = np.random.default_rng(4)
    h = _random_homography(rng)
    src = rng.uniform(0, 150, (30, 2))
    dst = Homography(h).apply(src)
    t = np.array([[2.5, 0, 13.0], [0, 2.5, -7.0], [0, 0, 1]])
    est = fit_dlt(Homography(t).apply(src), dst)
    # est expresses h in the pre-transformed coordinates of src
    np.testing.assert_allclose(est @ t / (est @ t)[2, 2], h / h[2, 2], atol=1e-9)


def test_estimation_errors():
    with pytest.raises(EstimationError):
        estimate_homography((np.zeros((3, 2)), np.zeros((3, 2))))
    line = np.stack([np.arange(10.0), np.arange(10.0)], axis=1)
    with pytest.raises(EstimationError):
        estimate_homography((line, line))


@given(seed=st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_rescale_conjugation_identity(seed):
    rng = np.random.default_rng(seed)
    h = Homography(_random_homography(rng))
    half = rescale_for_subframe(h)
    p = rng.uniform(-50, 250, (25, 2))
    np.testing.assert_allclose(half.apply(p / 2), h.apply(p) / 2, rtol=1e-12, atol=1e-9)


def test_rescale_flow_halves_vectors():
    flow = FlowField(np.stack([np.full((4, 6), 3.0), np.full((4, 6), -2.0)]))
    half = rescale_for_subframe(flow)
    assert half.shape == (2, 3)
    np.testing.assert_array_equal(half.data[0], 1.5)
    np.testing.assert_array_equal(half.data[1], -1.0)


@given(a=st.integers(-3, 3), b=st.integers(-3, 3), seed=st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_even_translation_commutes_with_packing(a, b, seed):
    data = np.random.default_rng(seed).random((16, 20))
    frame = RawBayerFrame(data, "RGGB", 16, 0, 1, normalized=True)
    warped, _ = warp_image(data, Homography.translation(2 * a, 2 * b), data.shape, mode="nearest")
    lhs = rawcore.pack_bayer(RawBayerFrame(warped, "RGGB", 16, 0, 1, normalized=True)).planes
    planes = rawcore.pack_bayer(frame).planes
    rhs, _ = warp_image(planes, rescale_for_subframe(Homography.translation(2 * a, 2 * b)),
                        planes.shape[1:], mode="nearest")
    np.testing.assert_array_equal(lhs, rhs)


def test_warp_convention():
    img = np.zeros((1, 10, 10))
    img[0, 3, 4] = 1.0
    out, valid = warp_image(img, Homography.translation(2, 1), (10, 10))
    assert out[0, 4, 6] == 1.0 and out.sum() == 1.0
    assert not valid[0, 0] and valid[9, 9]


# --- dense flow ------------------------------------------------------------

def test_flow_of_identical_frames_is_zero():
    img = _texture(64)
    np.testing.assert_array_equal(dense_flow(img, img).data, 0.0)
    flat = np.full((3, 32, 32), 0.4)
    np.testing.assert_array_equal(dense_flow(flat, flat * 1.0).data, 0.0)


@pytest.mark.parametrize("shift", [(2.0, -1.0), (0.5, 0.25), (-3.0, 2.5)])
def test_flow_recovers_translation(shift):
    img = _texture(96)
    b, _ = warp_image(img, Homography.translation(*shift), img.shape[1:])
    flow = dense_flow(img, b)
    inner = flow.data[:, 12:-12, 12:-12].reshape(2, -1)
    np.testing.assert_allclose(np.median(inner, axis=1), shift, atol=0.1)
    realigned, _ = warp_flow(b, flow)
    assert np.median(np.abs(realigned - img)[:, 12:-12, 12:-12]) < 0.01


@pytest.mark.parametrize("backend", ["numpy", "cython"])
def test_flow_backends_identical(backend):
    from rawvsr import _native
    if backend == "cython" and _native.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    img = _texture(64)
    b, _ = warp_image(img, Homography.translation(1.3, -0.7), img.shape[1:])
    ref = dense_flow(img, b, backend="numpy").data
    np.testing.assert_array_equal(dense_flow(img, b, backend=backend).data, ref)


# --- matching and pipeline -------------------------------------------------

def test_corner_matching_finds_translation():
    img = _texture(128)
    b, _ = warp_image(img, Homography.translation(5, 3), img.shape[1:])
    pairs = match_corners(img, b)
    assert len(pairs) >= 20
    d = pairs.dst - pairs.src
    np.testing.assert_allclose(np.median(d, axis=0), [5, 3], atol=0.6)


def _lr_hr_pair(scale=2, size=96, shift=(3.0, -2.0)):
    hr_full = _texture(size * scale + 32)
    hr_moved, _ = warp_image(hr_full, Homography.translation(*shift), hr_full.shape[1:])
    hr = hr_moved[:, 16:16 + size * scale, 16:16 + size * scale]
    lr = np.clip(downsample(hr_full[:, 16:16 + size * scale, 16:16 + size * scale], scale), 0, 1)
    return lr, hr


def test_align_pair_self_constructed():
    lr, hr = _lr_hr_pair()
    res = align_pair(lr, hr, scale=2)
    assert res.residual_median_px < 0.5
    assert res.lr_rgb.shape[1] * 2 == res.hr_rgb.shape[1]
    assert res.lr_rgb.shape[1] % 8 == 0 and res.lr_box[0] % 2 == 0 and res.lr_box[1] % 2 == 0
    err = np.abs(downsample(res.hr_rgb.astype(np.float64), 2) - res.lr_rgb)
    assert np.median(err) < 0.02


def test_align_pair_transforms_raw_mosaics():
    lr, hr = _lr_hr_pair()
    lr_raw = RawBayerFrame(np.full(lr.shape[1:], 1000, np.uint16), "RGGB", 14, 0, 16383)
    hr_raw = RawBayerFrame(np.full(hr.shape[1:], 2000, np.uint16), "RGGB", 14, 0, 16383)
    res = align_pair(lr, hr, lr_raw, hr_raw, scale=2)
    assert res.lr_raw.data.shape == res.lr_rgb.shape[1:]
    assert res.hr_raw.data.shape == res.hr_rgb.shape[1:]
    assert res.hr_raw.data.dtype == np.uint16 and (res.hr_raw.data == 2000).all()


def test_align_pair_rejects_wrong_scale():
    lr, hr = _lr_hr_pair()
    with pytest.raises(DataError):
        align_pair(lr, hr, scale=4)


def test_align_config_keeps_phase():
    with pytest.raises(ValueError):
        AlignConfig(margin=3)
