"""Convolutional building blocks for the encoder/decoder networks.

GDN follows the density-modeling formulation (beta/gamma with nonnegativity
enforced through a square reparameterization and a pass-through lower
bound); the residual and attention blocks follow the simplified designs
common in learned image compression.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class _LowerBound(torch.autograd.Function):
    """max(x, bound) that still passes gradients pushing x back above bound."""

    @staticmethod
    def forward(ctx, x, bound):
        ctx.save_for_backward(x, bound)
        return torch.max(x, bound)

    @staticmethod
    def backward(ctx, grad_output):
        x, bound = ctx.saved_tensors
        pass_through = (x >= bound) | (grad_output < 0)
        return grad_output * pass_through, None


def lower_bound(x: torch.Tensor, bound: float) -> torch.Tensor:
    return _LowerBound.apply(x, torch.tensor(bound, dtype=x.dtype, device=x.device))


class GDN(nn.Module):
    """Generalized divisive normalization: y = x / sqrt(beta + gamma * x^2).

    ``inverse=True`` multiplies instead of divides (decoder side). Parameters
    are stored as sqrt(value + offset) so that the effective beta stays above
    ``beta_min`` and gamma stays nonnegative; outputs are finite for any
    finite input.
    """

    _offset = 2**-18

    def __init__(self, channels: int, inverse: bool = False,
                 beta_min: float = 1e-6, gamma_init: float = 0.1):
        super().__init__()
        self.inverse = inverse
        self._beta_bound = float((beta_min + self._offset) ** 0.5)
        self._gamma_bound = float(self._offset**0.5)
        beta = torch.sqrt(torch.ones(channels) + self._offset)
        gamma = torch.sqrt(gamma_init * torch.eye(channels) + self._offset)
        self.beta = nn.Parameter(beta)
        self.gamma = nn.Parameter(gamma)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        channels = x.shape[1]
        beta = lower_bound(self.beta, self._beta_bound).pow(2) - self._offset
        gamma = lower_bound(self.gamma, self._gamma_bound).pow(2) - self._offset
        norm = F.conv2d(x * x, gamma.reshape(channels, channels, 1, 1), beta)
        if self.inverse:
            return x * torch.sqrt(norm)
        return x * torch.rsqrt(norm)


def conv3x3(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)


def conv1x1(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=1, stride=stride)


def subpel_conv3x3(in_ch: int, out_ch: int, upscale: int = 2) -> nn.Sequential:
    """3x3 conv into pixel shuffle: cheap learned upsampling."""
    return nn.Sequential(
        conv3x3(in_ch, out_ch * upscale**2), nn.PixelShuffle(upscale)
    )


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = conv3x3(in_ch, out_ch)
        self.conv2 = conv3x3(out_ch, out_ch)
        self.skip = conv1x1(in_ch, out_ch) if in_ch != out_ch else None

    def forward(self, x):
        identity = x if self.skip is None else self.skip(x)
        out = F.leaky_relu(self.conv1(x), inplace=True)
        out = F.leaky_relu(self.conv2(out), inplace=True)
        return out + identity


class ResidualBlockDown(nn.Module):
    """Stride-2 residual block with GDN on the main branch."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 2):
        super().__init__()
        self.conv1 = conv3x3(in_ch, out_ch, stride=stride)
        self.conv2 = conv3x3(out_ch, out_ch)
        self.gdn = GDN(out_ch)
        self.skip = conv1x1(in_ch, out_ch, stride=stride)

    def forward(self, x):
        out = F.leaky_relu(self.conv1(x), inplace=True)
        out = self.gdn(self.conv2(out))
        return out + self.skip(x)


class ResidualBlockUp(nn.Module):
    """Pixel-shuffle upsampling residual block with inverse GDN."""

    def __init__(self, in_ch: int, out_ch: int, upscale: int = 2):
        super().__init__()
        self.subpel = subpel_conv3x3(in_ch, out_ch, upscale)
        self.conv = conv3x3(out_ch, out_ch)
        self.igdn = GDN(out_ch, inverse=True)
        self.skip = subpel_conv3x3(in_ch, out_ch, upscale)

    def forward(self, x):
        out = F.leaky_relu(self.subpel(x), inplace=True)
        out = self.igdn(self.conv(out))
        return out + self.skip(x)


class _ResidualUnit(nn.Module):
    """1x1 -> 3x3 -> 1x1 bottleneck with half-width middle, as in the
    simplified attention design."""

    def __init__(self, ch: int):
        super().__init__()
        mid = max(ch // 2, 1)
        self.conv = nn.Sequential(
            conv1x1(ch, mid),
            nn.ReLU(inplace=True),
            conv3x3(mid, mid),
            nn.ReLU(inplace=True),
            conv1x1(mid, ch),
        )

    def forward(self, x):
        return x + self.conv(x)


class AttentionBlock(nn.Module):
    """Simplified (non-local-free) attention: sigmoid-gated residual branch."""

    def __init__(self, ch: int):
        super().__init__()
        self.trunk = nn.Sequential(*(_ResidualUnit(ch) for _ in range(3)))
        self.mask = nn.Sequential(
            *(_ResidualUnit(ch) for _ in range(3)), conv1x1(ch, ch)
        )

    def forward(self, x):
        return x + self.trunk(x) * torch.sigmoid(self.mask(x))
