"""Complex channel simulation: static AWGN and slow Rayleigh fading.

Conventions:
  * CN(0, s) means total variance s, split evenly between the real and
    imaginary components (s/2 each).
  * One fading gain per image, shared by all of that image's symbols.
  * Every random draw goes through an explicit ``torch.Generator`` so runs
    are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch

STATIC_AWGN = "static_awgn"
SLOW_FADING = "slow_fading"

DEFAULT_POWER_TOLERANCE = 1e-6


class ChannelError(ValueError):
    """Raised for power-constraint violations and zero-gain outages."""


@dataclass(frozen=True)
class ChannelScenario:
    """Channel family plus operating point.

    ``csi_at_transmitter`` defaults per kind: the static channel assumes full
    CSI everywhere, slow fading gives the transmitter no gain knowledge.
    """

    kind: str
    snr_db: float
    power_budget: float = 1.0
    csi_at_transmitter: Optional[bool] = None

    def __post_init__(self):
        if self.kind not in (STATIC_AWGN, SLOW_FADING):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not self.power_budget > 0:
            raise ValueError("power budget must be positive")
        expected_csi = self.kind == STATIC_AWGN
        if self.csi_at_transmitter is None:
            object.__setattr__(self, "csi_at_transmitter", expected_csi)
        elif self.csi_at_transmitter != expected_csi:
            raise ValueError(
                f"{self.kind} requires csi_at_transmitter={expected_csi}"
            )

    @property
    def noise_power(self) -> float:
        return snr_to_noise_power(self.snr_db, self.power_budget, 1.0)


@dataclass(frozen=True)
class ChannelRealization:
    """One channel draw: gain(s) and noise power.

    ``gain`` is a complex128 tensor, scalar or shaped (B,) for a batch of B
    images (one independent gain per image).
    """

    gain: torch.Tensor
    noise_power: float
    csi_at_transmitter: bool = True

    def __post_init__(self):
        g = torch.as_tensor(self.gain, dtype=torch.complex128)
        object.__setattr__(self, "gain", g)
        if self.noise_power < 0:
            raise ValueError("noise power must be nonnegative")


def snr_to_noise_power(
    snr_db: float, power_budget: float, mean_square_gain: float
) -> float:
    """Total complex noise variance hitting the target SNR.

    An ``snr_db`` of +inf is the noiseless sentinel and yields exactly 0.
    """
    if not power_budget > 0:
        raise ValueError("power budget must be positive")
    if not mean_square_gain > 0:
        raise ValueError("mean square gain must be positive")
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return mean_square_gain * power_budget / 10.0 ** (snr_db / 10.0)


def noise_power_to_snr(noise_power: float, power_budget: float, mean_square_gain: float) -> float:
    """Inverse of :func:`snr_to_noise_power` (dB)."""
    if noise_power == 0.0:
        return math.inf
    return 10.0 * math.log10(mean_square_gain * power_budget / noise_power)


def draw_realization(
    scenario: ChannelScenario,
    batch_size: int = 1,
    generator: Optional[torch.Generator] = None,
) -> ChannelRealization:
    """Draw per-image gains for a batch.

    Static: gain 1 for every image. Slow fading: i.i.d. CN(0, 1) gains.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if scenario.kind == STATIC_AWGN:
        gain = torch.ones(batch_size, dtype=torch.complex128)
    else:
        parts = torch.randn(batch_size, 2, dtype=torch.float64, generator=generator)
        gain = torch.view_as_complex(parts.contiguous() * math.sqrt(0.5))
    return ChannelRealization(
        gain=gain,
        noise_power=scenario.noise_power,
        csi_at_transmitter=scenario.csi_at_transmitter,
    )


def _gain_for(z: torch.Tensor, r: ChannelRealization) -> torch.Tensor:
    g = r.gain.to(z.device)
    if g.ndim == 0 or g.numel() == 1:
        return g.reshape(())
    if z.ndim < 2 or z.shape[0] != g.shape[0]:
        raise ValueError(
            f"gain batch {tuple(g.shape)} does not match input {tuple(z.shape)}"
        )
    return g.reshape(g.shape[0], *([1] * (z.ndim - 1)))


def transmit(
    z_bar: torch.Tensor,
    r: ChannelRealization,
    power_budget: Optional[float] = None,
    power_tolerance: float = DEFAULT_POWER_TOLERANCE,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Apply the channel: y = gain * z_bar + noise.

    When ``power_budget`` is given, the mean symbol power of ``z_bar`` must
    not exceed it beyond ``power_tolerance`` (relative). Quantized pipelines
    satisfy the budget statistically rather than per batch, so they pass a
    looser tolerance derived from the constellation's peak symbol power.
    """
    z = z_bar.to(torch.complex128)
    if power_budget is not None:
        measured = float(z.detach().abs().pow(2).mean())
        if measured > power_budget * (1.0 + power_tolerance):
            raise ChannelError(
                f"transmit power {measured:.6g} exceeds budget {power_budget:.6g} "
                f"(tolerance {power_tolerance:g})"
            )
    y = _gain_for(z, r) * z
    if r.noise_power > 0.0:
        # Draw on the generator's (CPU) device so seeding stays portable.
        parts = torch.randn(*z.shape, 2, dtype=torch.float64, generator=generator)
        noise = torch.view_as_complex(parts.contiguous() * math.sqrt(r.noise_power / 2.0))
        y = y + noise.to(z.device)
    return y


def equalize(y: torch.Tensor, r: ChannelRealization) -> torch.Tensor:
    """Receiver-side gain inversion: y * conj(h) / |h|^2."""
    if bool((r.gain.abs() == 0).any()):
        raise ChannelError("zero channel gain: equalization outage")
    g = _gain_for(y, r)
    return y.to(torch.complex128) * (g.conj() / g.abs().pow(2))


def precode(z_bar: torch.Tensor, r: ChannelRealization) -> torch.Tensor:
    """Transmitter-side phase pre-rotation by conj(h)/|h| (unit modulus).

    Requires transmitter CSI; symbol powers are unchanged.
    """
    if not r.csi_at_transmitter:
        raise ChannelError("precoding requires channel knowledge at the transmitter")
    if bool((r.gain.abs() == 0).any()):
        raise ChannelError("zero channel gain: cannot precode")
    g = _gain_for(z_bar, r)
    return z_bar.to(torch.complex128) * (g.conj() / g.abs())
