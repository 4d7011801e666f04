import os

import numpy as np
import pytest
import torch

from helpers import ACCEPTANCE_RESULTS
from rawvsr import synthpipe
from rawvsr.model import ModelConfig

torch.set_num_threads(1)


def tiny_config(**kw) -> ModelConfig:
    base = dict(scale=2, radius=1, channels=8, levels=2, deform_groups=2, n_extract_blocks=1,
                n_recon_blocks=1, sk_reduction=2)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def small_clips():
    """Two in-memory clips of 5 frames, 64x64 HR at scale 2."""
    src = synthpipe.synthetic_source_clips(2, 5, (64, 64), seed=3)
    return synthpipe.degrade_to_loaded(src, synthpipe.DegradationConfig(scale=2, pyramid_levels=2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _default_dcn_backend(monkeypatch):
    monkeypatch.delenv("RAWVSR_DCN_BACKEND", raising=False)
    monkeypatch.delenv("RAWVSR_NO_EXT", raising=False)
    yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
