"""Soft-to-hard symbol quantization with a straight-through surrogate gradient.

Forward passes emit exact constellation symbols (nearest-neighbour); the
backward pass routes every gradient through the softmax-weighted soft
assignment, both into the latents and, in learnable mode, into the
constellation points themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .constellation import Constellation, SymbolDistribution

HARDNESS_INIT = 5.0
HARDNESS_CAP = 100.0
ANNEAL_INCREMENT = 5.0
ANNEAL_PERIOD = 10000


@dataclass(frozen=True)
class AnnealState:
    """Hardness schedule state; ``step`` counts optimizer updates."""

    step: int = 0
    hardness: float = HARDNESS_INIT

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be nonnegative")
        if not 0.0 < self.hardness <= HARDNESS_CAP:
            raise ValueError(f"hardness must lie in (0, {HARDNESS_CAP}]")


def anneal_step(s: AnnealState) -> AnnealState:
    """Advance the hardness schedule by one parameter update.

    The increment itself grows every ``ANNEAL_PERIOD`` steps and the result
    is capped at ``HARDNESS_CAP``.
    """
    t = s.step + 1
    hardness = min(HARDNESS_CAP, s.hardness + ANNEAL_INCREMENT * (t // ANNEAL_PERIOD))
    return AnnealState(step=t, hardness=hardness)


def _as_complex128(z: torch.Tensor) -> torch.Tensor:
    if not z.is_complex():
        raise TypeError(f"expected a complex latent tensor, got dtype {z.dtype}")
    return z.to(torch.complex128)


def _squared_distances(z_ri: torch.Tensor, points_ri: torch.Tensor) -> torch.Tensor:
    # (..., 1, 2) - (M, 2) -> (..., M)
    diff = z_ri.unsqueeze(-2) - points_ri
    return diff.pow(2).sum(dim=-1)


class SoftHardQuantizer(nn.Module):
    """Maps complex latents onto a constellation.

    Points are stored as a float64 (M, 2) tensor of (real, imag) pairs; it is
    an ``nn.Parameter`` when ``learnable`` so an optimizer can update the
    constellation geometry alongside the network.
    """

    def __init__(
        self,
        constellation: Constellation,
        hardness: float = HARDNESS_INIT,
        learnable: bool = False,
    ):
        super().__init__()
        if not hardness > 0:
            raise ValueError(f"hardness must be positive, got {hardness}")
        self.power_budget = float(constellation.power_budget)
        self.learnable = bool(learnable)
        self.hardness = float(hardness)
        points_ri = torch.view_as_real(constellation.points).clone()
        if learnable:
            self.points_ri = nn.Parameter(points_ri)
        else:
            self.register_buffer("points_ri", points_ri)

    @property
    def order(self) -> int:
        return self.points_ri.shape[0]

    @property
    def constellation(self) -> Constellation:
        return Constellation(
            points=torch.view_as_complex(self.points_ri.detach().clone()),
            power_budget=self.power_budget,
            trainable=self.learnable,
        )

    def soft_assignments(self, z: torch.Tensor) -> torch.Tensor:
        """Per-latent softmax weights over the constellation, shape (..., M).

        Uses -hardness * squared distance as logits; torch's softmax already
        subtracts the row max, so hardness values up to the cap stay finite.
        """
        z_ri = torch.view_as_real(_as_complex128(z))
        d = _squared_distances(z_ri, self.points_ri)
        return torch.softmax(-self.hardness * d, dim=-1)

    def soft_quantize(self, z: torch.Tensor) -> torch.Tensor:
        w = self.soft_assignments(z)
        return torch.view_as_complex(w @ self.points_ri)

    def hard_quantize(self, z: torch.Tensor) -> torch.Tensor:
        z_ri = torch.view_as_real(_as_complex128(z))
        d = _squared_distances(z_ri, self.points_ri.detach())
        idx = torch.argmin(d, dim=-1)
        return torch.view_as_complex(self.points_ri.detach()[idx])

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Straight-through quantization.

        Returns ``(z_bar, weights)`` where ``z_bar`` equals the hard
        assignment bit-for-bit while its gradient (w.r.t. both ``z`` and, in
        learnable mode, the points) is that of the soft assignment.
        """
        w = self.soft_assignments(z)
        soft = torch.view_as_complex(w @ self.points_ri)
        hard = self.hard_quantize(z)
        return hard + (soft - soft.detach()), w

    @torch.no_grad()
    def renormalize_(self, dist: SymbolDistribution) -> None:
        """Rescale points in place so the ``dist``-weighted power is the budget."""
        probs = dist.probs.to(self.points_ri.dtype)
        weighted = (probs * self.points_ri.pow(2).sum(dim=-1)).sum()
        if float(weighted) <= 0.0:
            raise ValueError("weighted symbol power is zero; cannot renormalize")
        self.points_ri.mul_(torch.sqrt(weighted.new_tensor(self.power_budget) / weighted))


def soft_quantize(z: torch.Tensor, q: SoftHardQuantizer) -> torch.Tensor:
    """Softmax-weighted sum of constellation points, element-wise over ``z``."""
    return q.soft_quantize(z)


def hard_quantize(z: torch.Tensor, c: Constellation) -> torch.Tensor:
    """Nearest constellation symbol for every latent; ties go to the lowest index."""
    z_ri = torch.view_as_real(_as_complex128(z))
    points_ri = torch.view_as_real(c.points)
    d = _squared_distances(z_ri, points_ri)
    idx = torch.argmin(d, dim=-1)
    return torch.view_as_complex(points_ri[idx])


def straight_through_quantize(z: torch.Tensor, q: SoftHardQuantizer) -> torch.Tensor:
    """Hard forward value with the soft assignment's gradient."""
    z_bar, _ = q(z)
    return z_bar
