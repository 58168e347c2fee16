"""End-to-end optimization of the image transmission pipeline.

One training step runs encoder -> quantizer (straight-through) -> precoding
(when the transmitter has CSI) -> channel -> equalization -> decoder, then
applies the distortion + KL-regularization loss. The hardness schedule
advances once per optimizer update; in learned-constellation mode the
points are re-scaled to the power budget after every update using the same
batch's empirical symbol distribution.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional

import torch

from . import channel as ch
from .codec import Codec, CodecConfig, ImageBatch, mean_symbol_power, normalize_power
from .constellation import (
    SymbolDistribution,
    batch_distribution,
    build_qam,
    estimate_distribution,
)
from .data import ImageSet, batches, _mix_seed
from .metrics import MsSsimParams, mse, ms_ssim
from .quantizer import AnnealState, SoftHardQuantizer, anneal_step

QUANTIZER_KINDS = ("qam_fixed", "learned", "unquantized")
LAMBDA_DEFAULT = 0.05
LAMBDA_LARGE_ORDER_CUTOFF = 4096


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at optimizer step {step}")
        self.step = step
        self.value = value


@dataclass(frozen=True)
class TrainConfig:
    """Full training run specification; ``None`` fields resolve to the
    documented channel-dependent defaults."""

    metric_target: str = "psnr"  # psnr | msssim
    quantizer_kind: str = "qam_fixed"
    modulation_order: int = 16
    channel_kind: str = ch.STATIC_AWGN
    snr_train_db: float = 10.0
    power_budget: float = 1.0
    kl_weight: Optional[float] = None
    batch_size: int = 32
    crop_size: int = 128
    lr_init: Optional[float] = None
    lr_decay: float = 0.8
    lr_patience: int = 4
    early_stop_patience: int = 8
    max_epochs: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    min_improvement: float = 1e-6
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.metric_target not in ("psnr", "msssim"):
            raise ValueError(f"unknown metric target {self.metric_target!r}")
        if self.quantizer_kind not in QUANTIZER_KINDS:
            raise ValueError(f"unknown quantizer kind {self.quantizer_kind!r}")
        if self.kl_weight is not None and self.kl_weight < 0:
            raise ValueError("kl weight must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr decay must lie in (0, 1]")


def resolve_lambda(cfg: TrainConfig) -> float:
    """KL weight: 0.05 on the static channel for modest constellation sizes,
    0 for huge constellations, fading runs, and the unquantized baseline."""
    if cfg.kl_weight is not None:
        return cfg.kl_weight
    if cfg.quantizer_kind == "unquantized":
        return 0.0
    if cfg.channel_kind == ch.SLOW_FADING:
        return 0.0
    if cfg.modulation_order >= LAMBDA_LARGE_ORDER_CUTOFF:
        return 0.0
    return LAMBDA_DEFAULT


def resolve_lr(cfg: TrainConfig) -> float:
    if cfg.lr_init is not None:
        return cfg.lr_init
    return 1e-4 if cfg.channel_kind == ch.STATIC_AWGN else 5e-5


def kl_to_uniform(dist) -> torch.Tensor:
    """KL divergence (natural log) from ``dist`` to the uniform distribution.

    Accepts a SymbolDistribution or a probability tensor; stays
    differentiable for tensor input. Zero entries contribute zero.
    """
    probs = dist.probs if isinstance(dist, SymbolDistribution) else dist
    probs = probs if torch.is_tensor(probs) else torch.as_tensor(probs, dtype=torch.float64)
    m = probs.shape[-1]
    safe = probs.clamp_min(1e-12)
    return (probs * torch.log(safe * m)).sum(dim=-1)


def distortion(x: ImageBatch, x_hat: ImageBatch, metric_target: str) -> torch.Tensor:
    """Training distortion: mean squared error on [0, 1] pixels for PSNR
    models, 1 - MS-SSIM (scale count fitted to the image) otherwise."""
    ref = x.pixels.to(x_hat.pixels.device)
    if metric_target == "psnr":
        return mse(ref, x_hat.pixels).mean() / x.peak**2
    params = MsSsimParams.for_image(x.height, x.width, peak=x.peak)
    return (1.0 - ms_ssim(ref, x_hat.pixels, params)).mean()


def loss(x: ImageBatch, x_hat: ImageBatch, dist, cfg: TrainConfig) -> torch.Tensor:
    """Distortion plus the weighted KL regularizer.

    A zero weight (or missing distribution) returns the bare distortion so
    unregularized losses are bit-identical to the plain metric.
    """
    d = distortion(x, x_hat, cfg.metric_target)
    lam = resolve_lambda(cfg)
    if lam == 0.0 or dist is None:
        return d
    return d + lam * kl_to_uniform(dist)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    sigma_q: float


def history_csv_rows(history: list[EpochRecord]) -> list[str]:
    rows = ["epoch,train_loss,val_loss,lr,sigma_q"]
    for r in history:
        rows.append(
            f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.lr!r},{r.sigma_q!r}"
        )
    return rows


@dataclass
class TrainResult:
    codec: Codec
    quantizer: Optional[SoftHardQuantizer]
    anneal: AnnealState
    history: list[EpochRecord]
    best_val_loss: float
    optimizer_state: dict
    stopped_early: bool
    # Diagnostics: per-epoch mean symbol power on the channel input; in
    # learned mode the weighted constellation power after every update; in
    # unquantized mode the per-batch worst relative error of ||z_bar||^2
    # against k * power_budget.
    symbol_power: list[float] = field(default_factory=list)
    constellation_power_trace: list[float] = field(default_factory=list)
    norm_error_trace: list[float] = field(default_factory=list)


def build_quantizer(cfg: TrainConfig) -> Optional[SoftHardQuantizer]:
    """Quantizer for the configured mode; learned constellations start from
    the square QAM of the same order."""
    if cfg.quantizer_kind == "unquantized":
        return None
    const = build_qam(cfg.modulation_order, cfg.power_budget)
    return SoftHardQuantizer(
        const, hardness=AnnealState().hardness, learnable=cfg.quantizer_kind == "learned"
    )


def power_tolerance_for(quantizer: Optional[SoftHardQuantizer], power_budget: float) -> float:
    """Transmit-time slack: quantized symbols satisfy the budget only in
    distribution, so allow up to the constellation's peak symbol power."""
    if quantizer is None:
        return ch.DEFAULT_POWER_TOLERANCE
    peak = float(quantizer.points_ri.detach().pow(2).sum(dim=-1).max())
    return max(peak / power_budget - 1.0, 0.0) + ch.DEFAULT_POWER_TOLERANCE


def forward_pipeline(
    codec: Codec,
    quantizer: Optional[SoftHardQuantizer],
    scenario: ch.ChannelScenario,
    batch: ImageBatch,
    generator: Optional[torch.Generator],
):
    """One pass through the full transmission chain.

    Returns (reconstruction, differentiable batch distribution or None,
    channel input).
    """
    z = codec.encode(batch).z
    if quantizer is None:
        z_bar = normalize_power(z, scenario.power_budget)
        dist = None
    else:
        z_bar, weights = quantizer(z)
        dist = batch_distribution(weights)
    realization = ch.draw_realization(scenario, batch.batch_size, generator)
    tx = z_bar
    if scenario.csi_at_transmitter:
        tx = ch.precode(tx, realization)
    y = ch.transmit(
        tx,
        realization,
        power_budget=scenario.power_budget,
        power_tolerance=power_tolerance_for(quantizer, scenario.power_budget),
        generator=generator,
    )
    y = ch.equalize(y, realization)
    x_hat = codec.decode(y, batch.height, batch.width, peak=batch.peak)
    return x_hat, dist, z_bar


def _center_crop(img: torch.Tensor, size: int) -> torch.Tensor:
    if img.shape[0] < size or img.shape[1] < size:
        raise ValueError(f"image {tuple(img.shape)} smaller than crop {size}")
    top = (img.shape[0] - size) // 2
    left = (img.shape[1] - size) // 2
    return img[top : top + size, left : left + size, :]


def _validation_batch(val_set: ImageSet, crop_size: int) -> ImageBatch:
    crops = [_center_crop(val_set.image(i), crop_size) for i in range(len(val_set))]
    return ImageBatch(pixels=torch.stack(crops))


def train(
    cfg: TrainConfig,
    codec_cfg: CodecConfig,
    train_set: ImageSet,
    val_set: ImageSet,
    log=None,
    device: Optional[torch.device] = None,
) -> TrainResult:
    """Run the full optimization schedule and return the trained pipeline.

    Learning rate decays by ``lr_decay`` after ``lr_patience`` consecutive
    epochs without a validation improvement of at least ``min_improvement``;
    training stops after ``early_stop_patience`` stagnant epochs (best
    weights are restored) or at ``max_epochs``.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be nonempty")
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
    torch.manual_seed(cfg.seed)

    codec = Codec(codec_cfg)
    quantizer = build_quantizer(cfg)
    if device is not None:
        codec.to(device)
        if quantizer is not None:
            quantizer.to(device)
    anneal = AnnealState()
    if quantizer is not None:
        quantizer.hardness = anneal.hardness

    params = list(codec.parameters())
    if quantizer is not None and quantizer.learnable:
        params += list(quantizer.parameters())
    lr = resolve_lr(cfg)
    optimizer = torch.optim.Adam(params, lr=lr, betas=(cfg.adam_beta1, cfg.adam_beta2))

    scenario = ch.ChannelScenario(
        kind=cfg.channel_kind, snr_db=cfg.snr_train_db, power_budget=cfg.power_budget
    )
    chan_gen = torch.Generator().manual_seed(_mix_seed(cfg.seed, 0x5EED))
    val_batch = _validation_batch(val_set, cfg.crop_size)

    result = TrainResult(
        codec=codec,
        quantizer=quantizer,
        anneal=anneal,
        history=[],
        best_val_loss=math.inf,
        optimizer_state={},
        stopped_early=False,
    )
    best_state = None
    since_improve = 0
    since_decay = 0
    global_step = 0

    for epoch in range(1, cfg.max_epochs + 1):
        codec.train()
        step_losses = []
        epoch_power = []
        for batch in batches(train_set, cfg.batch_size, cfg.crop_size, cfg.seed, epoch):
            optimizer.zero_grad()
            x_hat, dist, z_bar = forward_pipeline(
                codec, quantizer, scenario, batch, chan_gen
            )
            step_loss = loss(batch, x_hat, dist, cfg)
            value = float(step_loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(global_step, value)
            step_loss.backward()
            optimizer.step()
            global_step += 1
            anneal = anneal_step(anneal)
            if quantizer is not None:
                quantizer.hardness = anneal.hardness
                if quantizer.learnable:
                    batch_dist = estimate_distribution(dist.detach())
                    quantizer.renormalize_(batch_dist)
                    result.constellation_power_trace.append(
                        quantizer.constellation.weighted_power(batch_dist)
                    )
            if quantizer is None:
                target = z_bar.shape[-1] * cfg.power_budget
                sq_norms = z_bar.detach().abs().pow(2).sum(dim=-1)
                result.norm_error_trace.append(
                    float((sq_norms - target).abs().max() / target)
                )
            step_losses.append(value)
            epoch_power.append(mean_symbol_power(z_bar))

        codec.eval()
        val_gen = torch.Generator().manual_seed(_mix_seed(cfg.seed, 0xA11D + epoch))
        with torch.no_grad():
            val_hat, val_dist, _ = forward_pipeline(
                codec, quantizer, scenario, val_batch, val_gen
            )
            val_loss = float(loss(val_batch, val_hat, val_dist, cfg))

        result.anneal = anneal
        result.symbol_power.append(sum(epoch_power) / len(epoch_power))
        result.history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=sum(step_losses) / len(step_losses),
                val_loss=val_loss,
                lr=optimizer.param_groups[0]["lr"],
                sigma_q=anneal.hardness,
            )
        )
        if log is not None:
            log(result.history[-1])

        if val_loss < result.best_val_loss - cfg.min_improvement:
            result.best_val_loss = val_loss
            best_state = {
                "codec": copy.deepcopy(codec.state_dict()),
                "quantizer": copy.deepcopy(quantizer.state_dict())
                if quantizer is not None
                else None,
            }
            since_improve = 0
            since_decay = 0
        else:
            since_improve += 1
            since_decay += 1
            if since_decay >= cfg.lr_patience:
                for group in optimizer.param_groups:
                    group["lr"] *= cfg.lr_decay
                since_decay = 0
            if since_improve >= cfg.early_stop_patience:
                result.stopped_early = True
                break

    if best_state is not None:
        codec.load_state_dict(best_state["codec"])
        if quantizer is not None and best_state["quantizer"] is not None:
            quantizer.load_state_dict(best_state["quantizer"])
    result.optimizer_state = optimizer.state_dict()
    return result
