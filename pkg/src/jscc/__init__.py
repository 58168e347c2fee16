"""Joint source-channel coding for wireless image transmission over finite
channel-input constellations: trainable codec, soft-to-hard quantization,
channel simulation, metrics, and an experiment harness."""

import os as _os

import torch as _torch

# Single-threaded kernels by default: required for bit-reproducible runs and
# for stability on constrained hosts. Override with JSCC_TORCH_THREADS.
_torch.set_num_threads(int(_os.environ.get("JSCC_TORCH_THREADS", "1")))

from .channel import (
    ChannelError,
    ChannelRealization,
    ChannelScenario,
    SLOW_FADING,
    STATIC_AWGN,
    draw_realization,
    equalize,
    precode,
    snr_to_noise_power,
    transmit,
)
from .codec import (
    Codec,
    CodecConfig,
    ImageBatch,
    LatentBlock,
    bandwidth_ratio,
    latent_length,
    normalize_power,
)
from .constellation import (
    Constellation,
    ConstellationError,
    SymbolDistribution,
    build_qam,
    estimate_distribution,
    renormalize_power,
)
from .metrics import MsSsimParams, ms_ssim, mse, psnr
from .quantizer import (
    AnnealState,
    SoftHardQuantizer,
    anneal_step,
    hard_quantize,
    soft_quantize,
    straight_through_quantize,
)
from .training import TrainConfig, TrainingDiverged, kl_to_uniform, loss, train

__version__ = "0.1.0"

__all__ = [
    "AnnealState",
    "ChannelError",
    "ChannelRealization",
    "ChannelScenario",
    "Codec",
    "CodecConfig",
    "Constellation",
    "ConstellationError",
    "ImageBatch",
    "LatentBlock",
    "MsSsimParams",
    "SLOW_FADING",
    "STATIC_AWGN",
    "SoftHardQuantizer",
    "SymbolDistribution",
    "TrainConfig",
    "TrainingDiverged",
    "anneal_step",
    "bandwidth_ratio",
    "build_qam",
    "draw_realization",
    "equalize",
    "estimate_distribution",
    "hard_quantize",
    "kl_to_uniform",
    "latent_length",
    "loss",
    "ms_ssim",
    "mse",
    "normalize_power",
    "precode",
    "psnr",
    "renormalize_power",
    "snr_to_noise_power",
    "soft_quantize",
    "straight_through_quantize",
    "train",
    "transmit",
]
