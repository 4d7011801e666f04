"""Versioned single-file checkpoints."""

from __future__ import annotations

from pathlib import Path

import torch

from .config import ModelConfig
from .network import RealRawVSR

CKPT_FORMAT = "rawvsr-ckpt-v1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: RealRawVSR, step: int = 0, optimizer=None, **extra) -> Path:
    """Write parameters, model config, step and optional optimizer/extra state.

    The file is written to a temporary name and renamed, so an interrupted
    save never leaves a truncated checkpoint behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CKPT_FORMAT,
        "model_config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
        "step": int(step),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    payload.update(extra)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, map_location="cpu") -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CKPT_FORMAT:
        raise CheckpointError(f"{path} is not a {CKPT_FORMAT} checkpoint")
    return payload


def model_from_checkpoint(path_or_payload, map_location="cpu") -> tuple[RealRawVSR, dict]:
    payload = path_or_payload if isinstance(path_or_payload, dict) else load_checkpoint(path_or_payload, map_location)
    model = RealRawVSR(ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    return model, payload
