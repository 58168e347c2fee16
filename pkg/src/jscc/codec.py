"""Trainable image codec: convolutional encoder to complex latents and the
mirrored decoder back to pixels.

Shape contract: an (H, W, 3) image maps to k = H*W*c_out / (2*F^2) complex
symbols, where F is the total spatial downsampling per side and c_out the
encoder's output channel count. Channels pair up as (even, odd) =
(real, imaginary); the complex latents live in float64 while the networks
run in float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .layers import (
    AttentionBlock,
    ResidualBlock,
    ResidualBlockDown,
    ResidualBlockUp,
    conv1x1,
    conv3x3,
)

PIXEL_PEAK = 255.0


@dataclass(frozen=True)
class CodecConfig:
    """Architecture knobs.

    c_out controls bandwidth (must be even: channels pair into complex
    symbols); downsample_factor is the total spatial reduction per side and
    must be a power of two; base_width is the internal channel count.
    """

    c_out: int = 16
    base_width: int = 64
    downsample_factor: int = 4

    def __post_init__(self):
        if self.c_out < 2 or self.c_out % 2 != 0:
            raise ValueError(f"c_out must be even and >= 2, got {self.c_out}")
        if self.base_width < 1:
            raise ValueError("base_width must be positive")
        f = self.downsample_factor
        if f < 1 or (f & (f - 1)) != 0:
            raise ValueError(f"downsample_factor must be a power of two, got {f}")

    @property
    def stages(self) -> int:
        return int(math.log2(self.downsample_factor))


@dataclass(frozen=True)
class ImageBatch:
    """A batch of RGB images, pixels in [0, peak], shape (B, H, W, 3)."""

    pixels: torch.Tensor
    peak: float = PIXEL_PEAK

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 4 or p.shape[-1] != 3:
            raise ValueError(f"expected (B, H, W, 3) pixels, got {tuple(p.shape)}")
        if not self.peak > 0:
            raise ValueError("peak must be positive")

    @property
    def batch_size(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class LatentBlock:
    """Complex latent vectors, one length-k row per image."""

    z: torch.Tensor

    def __post_init__(self):
        if not self.z.is_complex() or self.z.ndim != 2:
            raise ValueError("latents must be a complex (B, k) tensor")

    @property
    def k(self) -> int:
        return self.z.shape[1]


def latent_length(cfg: CodecConfig, height: int, width: int) -> int:
    """Channel uses per image for the given codec and image size."""
    f = cfg.downsample_factor
    if height % f or width % f:
        raise ValueError(
            f"image size {height}x{width} not divisible by downsample factor {f}"
        )
    return (height // f) * (width // f) * cfg.c_out // 2


def bandwidth_ratio(cfg: CodecConfig, height: int, width: int, channels: int = 3) -> float:
    """Channel symbols per source pixel value: k / (H * W * C)."""
    return latent_length(cfg, height, width) / (height * width * channels)


def features_to_latent(feat: torch.Tensor) -> torch.Tensor:
    """(B, c_out, h, w) real features -> (B, k) complex128 latents."""
    b, c, h, w = feat.shape
    if c % 2:
        raise ValueError("feature channels must be even to pair into complex symbols")
    pairs = feat.reshape(b, c // 2, 2, h, w).to(torch.float64)
    real = pairs[:, :, 0].reshape(b, -1)
    imag = pairs[:, :, 1].reshape(b, -1)
    return torch.complex(real, imag)


def latent_to_features(
    z: torch.Tensor, c_out: int, height: int, width: int, dtype=torch.float32
) -> torch.Tensor:
    """Inverse of :func:`features_to_latent` for a (h, w) feature grid."""
    b, k = z.shape
    if k != c_out // 2 * height * width:
        raise ValueError(
            f"latent length {k} does not match {c_out} channels on {height}x{width}"
        )
    real = z.real.reshape(b, c_out // 2, height, width)
    imag = z.imag.reshape(b, c_out // 2, height, width)
    return torch.stack((real, imag), dim=2).reshape(b, c_out, height, width).to(dtype)


def normalize_power(z: torch.Tensor, power_budget: float) -> torch.Tensor:
    """Scale each latent row to squared norm k * power_budget exactly.

    This is the unquantized transmission path: no constellation, just the
    average power constraint enforced per image.
    """
    if not power_budget > 0:
        raise ValueError("power budget must be positive")
    z = z.to(torch.complex128)
    norm = torch.linalg.vector_norm(z, dim=-1, keepdim=True)
    if bool((norm.detach() == 0).any()):
        raise ValueError("cannot power-normalize a zero latent vector")
    return z * (math.sqrt(z.shape[-1] * power_budget) / norm)


def mean_symbol_power(z: torch.Tensor) -> float:
    """Average |symbol|^2 over everything passed in."""
    return float(z.detach().abs().pow(2).mean())


class Encoder(nn.Module):
    """Stem conv, strided residual stages with GDN, attention-wrapped
    residual bottleneck, 1x1 projection to c_out channels."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        w = cfg.base_width
        layers: list[nn.Module] = [conv3x3(3, w)]
        for _ in range(cfg.stages):
            layers.append(ResidualBlockDown(w, w))
        layers += [
            AttentionBlock(w),
            ResidualBlock(w, w),
            AttentionBlock(w),
            conv1x1(w, cfg.c_out),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, x01: torch.Tensor) -> torch.Tensor:
        return self.net(x01)


class Decoder(nn.Module):
    """Mirror of the encoder; pixel-shuffle upsampling and inverse GDN,
    sigmoid output in [0, 1]."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        w = cfg.base_width
        layers: list[nn.Module] = [
            conv1x1(cfg.c_out, w),
            AttentionBlock(w),
            ResidualBlock(w, w),
            AttentionBlock(w),
        ]
        for _ in range(cfg.stages):
            layers.append(ResidualBlockUp(w, w))
        layers.append(conv3x3(w, 3))
        self.net = nn.Sequential(*layers)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(feat))


class Codec(nn.Module):
    """Encoder/decoder pair operating on ImageBatch / LatentBlock values."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def encode(self, batch: ImageBatch) -> LatentBlock:
        pixels = batch.pixels
        latent_length(self.cfg, batch.height, batch.width)  # shape check
        x01 = (pixels.permute(0, 3, 1, 2) / batch.peak).to(self.dtype)
        feat = self.encoder(x01.to(self.device))
        return LatentBlock(z=features_to_latent(feat))

    def decode(self, y: torch.Tensor, height: int, width: int,
               peak: float = PIXEL_PEAK) -> ImageBatch:
        f = self.cfg.downsample_factor
        feat = latent_to_features(
            y, self.cfg.c_out, height // f, width // f, dtype=self.dtype
        )
        x01 = self.decoder(feat)
        pixels = (x01 * peak).clamp(0.0, peak).permute(0, 2, 3, 1)
        return ImageBatch(pixels=pixels, peak=peak)
