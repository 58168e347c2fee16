"""Channel-input constellations: square QAM construction, usage statistics,
and power renormalization.

All constellation math runs in float64 / complex128 so that power budgets
hold to far better than the 1e-9 tolerances the rest of the pipeline
assumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


class ConstellationError(ValueError):
    """Raised when a constellation cannot be built or becomes degenerate."""


@dataclass(frozen=True)
class Constellation:
    """An ordered set of complex channel symbols with an average power budget.

    Attributes:
        points: complex128 tensor of shape (M,), the symbol amplitudes.
        power_budget: target average symbol power (P-bar), > 0.
        trainable: whether the points are meant to be optimized downstream.
    """

    points: torch.Tensor
    power_budget: float
    trainable: bool = False

    def __post_init__(self):
        pts = torch.as_tensor(self.points, dtype=torch.complex128).reshape(-1)
        object.__setattr__(self, "points", pts)
        if pts.numel() < 2:
            raise ConstellationError(f"need at least 2 points, got {pts.numel()}")
        if not torch.isfinite(torch.view_as_real(pts)).all():
            raise ConstellationError("constellation points must be finite")
        if not (self.power_budget > 0 and math.isfinite(self.power_budget)):
            raise ConstellationError(
                f"power budget must be positive and finite, got {self.power_budget}"
            )

    @property
    def order(self) -> int:
        return self.points.numel()

    def mean_power(self) -> float:
        """Average symbol power under the uniform distribution."""
        return float(self.points.abs().pow(2).mean())

    def weighted_power(self, dist: "SymbolDistribution") -> float:
        """Average symbol power under ``dist``."""
        if dist.probs.numel() != self.order:
            raise ConstellationError(
                f"distribution has {dist.probs.numel()} entries for {self.order} points"
            )
        return float((dist.probs * self.points.abs().pow(2)).sum())


@dataclass(frozen=True)
class SymbolDistribution:
    """Probability of each constellation point being emitted."""

    probs: torch.Tensor = field()

    def __post_init__(self):
        p = torch.as_tensor(self.probs, dtype=torch.float64).reshape(-1)
        object.__setattr__(self, "probs", p)
        if (p < 0).any():
            raise ValueError("probabilities must be nonnegative")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {float(p.sum())}, expected 1")

    @property
    def order(self) -> int:
        return self.probs.numel()


def qam_spacing(order: int, power_budget: float) -> float:
    """Lattice spacing of a square QAM grid whose uniform mean power is the budget.

    With L = sqrt(order) levels per real/imaginary axis at +-d/2, +-3d/2, ...,
    each axis carries half the budget, giving d = sqrt(6 * P / (L**2 - 1)).
    """
    levels = _qam_levels_per_axis(order)
    return math.sqrt(6.0 * power_budget / (levels**2 - 1))


def qam_max_amplitude(order: int, power_budget: float) -> float:
    """Largest per-axis coordinate of the square QAM grid."""
    levels = _qam_levels_per_axis(order)
    return (levels - 1) / 2 * qam_spacing(order, power_budget)


def _qam_levels_per_axis(order: int) -> int:
    if order < 4:
        raise ConstellationError(f"QAM order must be >= 4, got {order}")
    levels = math.isqrt(order)
    if levels * levels != order:
        raise ConstellationError(f"QAM order must be a perfect square, got {order}")
    return levels


def build_qam(order: int, power_budget: float) -> Constellation:
    """Build a square QAM constellation with exact uniform mean power.

    Points are ordered row-major: imaginary coordinate ascending in the outer
    loop, real coordinate ascending in the inner loop. A final uniform
    rescale pins the uniform-distribution mean power to the budget to the
    last float64 digit.
    """
    if not (power_budget > 0 and math.isfinite(power_budget)):
        raise ConstellationError(
            f"power budget must be positive and finite, got {power_budget}"
        )
    levels = _qam_levels_per_axis(order)
    d = qam_spacing(order, power_budget)
    axis = (torch.arange(levels, dtype=torch.float64) - (levels - 1) / 2) * d
    imag, real = torch.meshgrid(axis, axis, indexing="ij")
    points = torch.complex(real, imag).reshape(-1)
    # Kill residual rounding so the budget holds exactly under summation.
    points = points * math.sqrt(power_budget / float(points.abs().pow(2).mean()))
    return Constellation(points=points, power_budget=power_budget)


def estimate_distribution(soft_weights: torch.Tensor) -> SymbolDistribution:
    """Empirical symbol distribution from soft-assignment weights.

    ``soft_weights`` has shape (..., M); every trailing row must be a valid
    probability vector (softmax output). The estimate is the plain average
    of the rows over all leading dimensions.
    """
    w = torch.as_tensor(soft_weights, dtype=torch.float64)
    if w.ndim < 1 or w.shape[-1] < 2:
        raise ValueError(f"expected (..., M) weights with M >= 2, got {tuple(w.shape)}")
    flat = w.reshape(-1, w.shape[-1])
    if flat.shape[0] == 0:
        raise ValueError("cannot estimate a distribution from an empty batch")
    if (flat < 0).any():
        raise ValueError("soft weights must be nonnegative")
    row_sums = flat.sum(dim=-1)
    if (row_sums - 1.0).abs().max() > 1e-6:
        raise ValueError("soft-weight rows must each sum to 1 (softmax output)")
    probs = flat.mean(dim=0)
    # Rows are only normalized to 1e-6; pin the average to an exact simplex point.
    return SymbolDistribution(probs=probs / probs.sum())


def batch_distribution(soft_weights: torch.Tensor) -> torch.Tensor:
    """Differentiable version of :func:`estimate_distribution`.

    Returns the averaged weight vector as a tensor (gradients intact), for
    use inside a training loss. No validation beyond shape.
    """
    if soft_weights.ndim < 2:
        raise ValueError("expected at least 2-d soft weights")
    flat = soft_weights.reshape(-1, soft_weights.shape[-1])
    return flat.mean(dim=0)


def renormalize_power(c: Constellation, dist: SymbolDistribution) -> Constellation:
    """Uniformly rescale points so the ``dist``-weighted power equals the budget.

    All points share one real scale factor, so angles and relative geometry
    are preserved.
    """
    weighted = (dist.probs.to(torch.float64) * c.points.abs().pow(2)).sum()
    if float(weighted) <= 0.0:
        raise ConstellationError("weighted symbol power is zero; cannot renormalize")
    scale = math.sqrt(c.power_budget) / math.sqrt(float(weighted))
    return Constellation(
        points=c.points * scale,
        power_budget=c.power_budget,
        trainable=c.trainable,
    )


def export_csv_rows(c: Constellation, dist: SymbolDistribution) -> list[str]:
    """Rows (including header) for the ``real,imag,prob`` constellation CSV."""
    if dist.order != c.order:
        raise ConstellationError("distribution order does not match constellation")
    rows = ["real,imag,prob"]
    for j in range(c.order):
        p = c.points[j]
        rows.append(f"{float(p.real)!r},{float(p.imag)!r},{float(dist.probs[j])!r}")
    return rows
