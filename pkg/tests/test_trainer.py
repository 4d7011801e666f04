import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from rawvsr.errors import DataError, TrainingDiverged
from rawvsr.model import RealRawVSR, load_checkpoint, model_from_checkpoint
from rawvsr.trainer import TrainConfig, sample_patch, subsample_clip, train

from conftest import tiny_config


def _tcfg(**kw):
    base = dict(iterations=6, batch_size=1, patch_size=16, lr=1e-3, temporal_stride=1, seed=0,
                checkpoint_interval=3, log_interval=1)
    base.update(kw)
    return TrainConfig(**base)


def test_subsample_reference_counts():
    assert len(subsample_clip(range(150))) == 50
    assert subsample_clip(range(9)) == [0, 3, 6]
    assert len(subsample_clip(range(3))) == 1


def test_subsample_too_short():
    with pytest.raises(DataError):
        subsample_clip(range(2))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(color_correction="bogus")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"no_such_key": 1})
    with pytest.raises(ValueError):
        TrainConfig(patch_size=18).check_model(tiny_config(levels=2))
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_patch_shapes_and_even_origin(small_clips):
    rng = np.random.default_rng(0)
    clip = small_clips[0]
    origins = set()
    for _ in range(50):
        p = sample_patch(clip, rng, 16, radius=1)
        assert p.raw.shape == (3, 16, 16)
        assert p.lr_rgb.shape == (3, 16, 16)
        assert p.hr_rgb.shape == (3, 32, 32)
        assert p.origin[0] % 2 == 0 and p.origin[1] % 2 == 0
        origins.add(p.origin)
    assert len(origins) > 1


def test_patch_hr_matches_scaled_coordinates(small_clips):
    clip = small_clips[0]
    p = sample_patch(clip, np.random.default_rng(5), 8, radius=1)
    y, x = p.origin
    np.testing.assert_array_equal(p.hr_rgb, clip.hr_rgb[p.center, :, 2 * y:2 * y + 16, 2 * x:2 * x + 16])
    np.testing.assert_array_equal(p.raw[1], clip.lr_raw[p.center, y:y + 8, x:x + 8])


def test_patch_sequence_is_seeded(small_clips):
    ra, rb = np.random.default_rng(7), np.random.default_rng(7)
    a = [sample_patch(small_clips[0], ra, 8, 1).origin for _ in range(10)]
    b = [sample_patch(small_clips[0], rb, 8, 1).origin for _ in range(10)]
    assert a == b


def test_phase_flip_keeps_cfa_phase(small_clips):
    clip = small_clips[0]
    rng = np.random.default_rng(3)
    seen = set()
    for _ in range(30):
        p = sample_patch(clip, rng, 8, 1, phase_flip=True)
        seen.add(p.flips)
        y, x = p.origin
        oy, ox = y + int(p.flips[0]), x + int(p.flips[1])
        window = clip.lr_raw[p.center, oy:oy + 8, ox:ox + 8]
        if p.flips[0]:
            window = window[::-1]
        if p.flips[1]:
            window = window[:, ::-1]
        np.testing.assert_array_equal(p.raw[1], window)
        # a flipped window starting at an odd offset ends on an even one, so the
        # top-left site of the result keeps the colour of the original even grid
        for axis, flipped in enumerate(p.flips):
            if flipped:
                assert ((oy, ox)[axis] + 7) % 2 == 0
    assert len(seen) == 4


def test_patch_too_small(small_clips):
    with pytest.raises(DataError):
        sample_patch(small_clips[0], np.random.default_rng(0), 64, 1)


def test_train_writes_log_and_checkpoints(small_clips, tmp_path):
    result = train(tiny_config(), _tcfg(), small_clips, tmp_path)
    lines = [json.loads(s) for s in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert [r["step"] for r in lines] == list(range(1, 7))
    assert set(lines[0]) == {"step", "loss", "loss_uncorrected", "lr", "wallclock"}
    assert (tmp_path / "ckpt_0000003.pt").exists()
    assert result.checkpoint == tmp_path / "last.pt"
    assert load_checkpoint(result.checkpoint)["step"] == 6


def test_resume_reproduces_trajectory(small_clips, tmp_path):
    cfg, tcfg = tiny_config(), _tcfg(iterations=8, checkpoint_interval=0)
    full = train(cfg, tcfg, small_clips, tmp_path / "full")
    first = train(cfg, tcfg, small_clips, tmp_path / "split", stop_at=4)
    assert first.final_step == 4
    second = train(cfg, tcfg, small_clips, tmp_path / "split", resume=first.checkpoint)
    losses_full = [r["loss"] for r in full.metrics]
    losses_split = [r["loss"] for r in first.metrics + second.metrics]
    assert losses_full == losses_split
    logged = [json.loads(s)["step"] for s in (tmp_path / "split" / "metrics.jsonl").read_text().splitlines()]
    assert logged == list(range(1, 9))


def test_zero_learning_rate_freezes_parameters(small_clips, tmp_path):
    cfg = tiny_config()
    result = train(cfg, _tcfg(lr=0.0, iterations=3), small_clips, tmp_path)
    torch.manual_seed(0)
    init = RealRawVSR(cfg).state_dict()
    trained, _ = model_from_checkpoint(result.checkpoint)
    for k, v in trained.state_dict().items():
        assert torch.equal(v, init[k]), k


def test_checkpoint_round_trip_is_bit_exact(small_clips, tmp_path):
    result = train(tiny_config(), _tcfg(iterations=2), small_clips, tmp_path)
    a, _ = model_from_checkpoint(result.checkpoint)
    b, _ = model_from_checkpoint(result.checkpoint)
    x = torch.from_numpy(small_clips[0].lr_raw[:3, :16, :16]).float()[None]
    with torch.no_grad():
        assert torch.equal(a(x, small_clips[0].phase), b(x, small_clips[0].phase))


def test_scale_mismatch(small_clips, tmp_path):
    with pytest.raises(DataError):
        train(tiny_config(scale=3), _tcfg(), small_clips, tmp_path)


def test_non_finite_loss_aborts_with_dump(small_clips, tmp_path):
    bad = [replace(c, lr_raw=np.full_like(c.lr_raw, np.nan)) for c in small_clips]
    with pytest.raises(TrainingDiverged):
        train(tiny_config(), _tcfg(), bad, tmp_path)
    dump = json.loads((tmp_path / "nan_dump.json").read_text())
    assert dump["step"] == 0 and not dump["output_finite"]
