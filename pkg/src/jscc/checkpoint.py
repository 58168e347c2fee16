"""Self-describing model archives.

A checkpoint stores everything needed to rebuild the pipeline: both configs,
network weights, constellation state, the annealing step, and optimizer
state. The version field is mandatory and checked on load.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path
from typing import Optional

import torch

from .codec import Codec, CodecConfig
from .constellation import Constellation
from .quantizer import AnnealState, SoftHardQuantizer
from .training import TrainConfig, TrainResult

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for unreadable, incompatible, or mismatched checkpoints."""


def save_checkpoint(path: str | Path, result: TrainResult, codec_cfg: CodecConfig,
                    train_cfg: TrainConfig) -> None:
    q = result.quantizer
    payload = {
        "version": CHECKPOINT_VERSION,
        "codec_cfg": asdict(codec_cfg),
        "train_cfg": asdict(train_cfg),
        "codec_state": result.codec.state_dict(),
        "quantizer": None
        if q is None
        else {
            "points_ri": q.points_ri.detach().clone(),
            "power_budget": q.power_budget,
            "learnable": q.learnable,
            "hardness": q.hardness,
        },
        "anneal": {"step": result.anneal.step, "hardness": result.anneal.hardness},
        "optimizer_state": result.optimizer_state,
        "best_val_loss": result.best_val_loss,
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> dict:
    try:
        payload = torch.load(str(path), weights_only=True)
    except Exception as exc:  # unreadable or tampered archive
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path} is not a model checkpoint (no version field)")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return payload


def rebuild(payload: dict) -> tuple[Codec, Optional[SoftHardQuantizer], TrainConfig, CodecConfig, AnnealState]:
    """Reconstruct the trained pipeline from a loaded checkpoint payload."""
    codec_cfg = CodecConfig(**payload["codec_cfg"])
    train_cfg = TrainConfig(**payload["train_cfg"])
    codec = Codec(codec_cfg)
    codec.load_state_dict(payload["codec_state"])
    codec.eval()
    quantizer = None
    qstate = payload["quantizer"]
    if qstate is not None:
        const = Constellation(
            points=torch.view_as_complex(qstate["points_ri"].to(torch.float64)),
            power_budget=float(qstate["power_budget"]),
            trainable=bool(qstate["learnable"]),
        )
        quantizer = SoftHardQuantizer(
            const, hardness=float(qstate["hardness"]), learnable=bool(qstate["learnable"])
        )
    anneal = AnnealState(
        step=int(payload["anneal"]["step"]),
        hardness=float(payload["anneal"]["hardness"]),
    )
    return codec, quantizer, train_cfg, codec_cfg, anneal
