"""Flat key=value experiment configuration.

One key per line, ``#`` comments, no nesting; keys mirror the training,
codec, and dataset field names so configs stay greppable and diffable. A
resolved snapshot (all defaults materialized) is written next to every run
so outputs are reproducible from the snapshot plus the seed alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Optional

from .channel import SLOW_FADING, STATIC_AWGN
from .codec import CodecConfig
from .data import DatasetSpec
from .training import TrainConfig, resolve_lambda, resolve_lr


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config field {key!r}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs: dataset, codec shape, schedule, evaluation."""

    data_root: str = ""
    crop_size: int = 128
    train_fraction: float = 0.9
    split_seed: int = 0

    c_out: int = 16
    base_width: int = 64
    downsample_factor: int = 4

    metric: str = "psnr"
    quantizer: str = "qam_fixed"
    modulation_order: int = 16
    channel: str = STATIC_AWGN
    snr_train_db: float = 10.0
    power_budget: float = 1.0
    kl_weight: Optional[float] = None
    batch_size: int = 32
    lr_init: Optional[float] = None
    lr_decay: float = 0.8
    lr_patience: int = 4
    early_stop_patience: int = 8
    max_epochs: int = 1000
    seed: int = 0
    deterministic: bool = True

    eval_snrs_db: tuple[float, ...] = (1.0, 4.0, 7.0, 10.0, 13.0, 16.0)
    eval_draws: int = 10
    eval_seed: int = 1234
    eval_metric: Optional[str] = None
    constellation_batch: int = 8


_BOOL_TOKENS = {"true": True, "false": False, "1": True, "0": False}


def _parse_value(key: str, raw: str, annotation: str):
    raw = raw.strip()
    if raw.startswith(("{", "[")) or raw.endswith(("}", "]")):
        raise ConfigError(key, "nested values are not supported; use flat key = value")
    try:
        if annotation == "int":
            return int(raw)
        if annotation == "float":
            return float(raw)
        if annotation == "Optional[float]":
            return None if raw.lower() == "none" else float(raw)
        if annotation == "Optional[str]":
            return None if raw.lower() == "none" else raw
        if annotation == "bool":
            token = raw.lower()
            if token not in _BOOL_TOKENS:
                raise ValueError(f"expected true/false, got {raw!r}")
            return _BOOL_TOKENS[token]
        if annotation == "str":
            return raw
        if annotation == "tuple[float, ...]":
            return tuple(float(part) for part in raw.split(",") if part.strip())
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from exc
    raise ConfigError(key, f"unsupported field type {annotation}")


def _annotations() -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(ExperimentConfig)}


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat config text; unknown keys and malformed lines are errors."""
    known = _annotations()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"line {lineno}", f"expected 'key = value', got {stripped!r}"
            )
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in known:
            raise ConfigError(key, "unknown configuration key")
        if key in values:
            raise ConfigError(key, "duplicate key")
        values[key] = _parse_value(key, raw, known[key])
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def validate(cfg: ExperimentConfig) -> None:
    if cfg.metric not in ("psnr", "msssim"):
        raise ConfigError("metric", f"must be psnr or msssim, got {cfg.metric!r}")
    if cfg.eval_metric is not None and cfg.eval_metric not in ("psnr", "msssim"):
        raise ConfigError("eval_metric", f"must be psnr or msssim, got {cfg.eval_metric!r}")
    if cfg.quantizer not in ("qam_fixed", "learned", "unquantized"):
        raise ConfigError("quantizer", f"unknown quantizer {cfg.quantizer!r}")
    if cfg.channel not in (STATIC_AWGN, SLOW_FADING):
        raise ConfigError("channel", f"unknown channel {cfg.channel!r}")
    if cfg.quantizer != "unquantized":
        m = cfg.modulation_order
        root = math.isqrt(m) if m > 0 else 0
        if m < 4 or root * root != m:
            raise ConfigError(
                "modulation_order", f"must be a perfect square >= 4, got {m}"
            )
    if cfg.crop_size % cfg.downsample_factor:
        raise ConfigError(
            "crop_size",
            f"{cfg.crop_size} not divisible by downsample_factor {cfg.downsample_factor}",
        )
    if cfg.eval_draws < 1:
        raise ConfigError("eval_draws", "must be >= 1")
    if not cfg.eval_snrs_db:
        raise ConfigError("eval_snrs_db", "need at least one evaluation SNR")
    try:
        to_codec_config(cfg)
        to_train_config(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("(config)", str(exc)) from exc


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Materialize every defaulted field so the snapshot is complete."""
    train_cfg = to_train_config(cfg)
    return replace(
        cfg,
        kl_weight=resolve_lambda(train_cfg),
        lr_init=resolve_lr(train_cfg),
        eval_metric=cfg.eval_metric or cfg.metric,
        eval_snrs_db=tuple(sorted(cfg.eval_snrs_db)),
    )


def serialize(cfg: ExperimentConfig) -> str:
    """Stable flat rendering, one sorted key per line."""
    lines = []
    for f in sorted(fields(ExperimentConfig), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            rendered = ",".join(repr(float(v)) for v in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        elif value is None:
            rendered = "none"
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def to_codec_config(cfg: ExperimentConfig) -> CodecConfig:
    return CodecConfig(
        c_out=cfg.c_out,
        base_width=cfg.base_width,
        downsample_factor=cfg.downsample_factor,
    )


def to_train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        metric_target=cfg.metric,
        quantizer_kind=cfg.quantizer,
        modulation_order=cfg.modulation_order,
        channel_kind=cfg.channel,
        snr_train_db=cfg.snr_train_db,
        power_budget=cfg.power_budget,
        kl_weight=cfg.kl_weight,
        batch_size=cfg.batch_size,
        crop_size=cfg.crop_size,
        lr_init=cfg.lr_init,
        lr_decay=cfg.lr_decay,
        lr_patience=cfg.lr_patience,
        early_stop_patience=cfg.early_stop_patience,
        max_epochs=cfg.max_epochs,
        seed=cfg.seed,
        deterministic=cfg.deterministic,
    )


def to_dataset_spec(cfg: ExperimentConfig) -> DatasetSpec:
    if not cfg.data_root:
        raise ConfigError("data_root", "a dataset directory is required")
    return DatasetSpec(
        root=cfg.data_root,
        crop_size=cfg.crop_size,
        train_fraction=cfg.train_fraction,
        seed=cfg.split_seed,
    )
