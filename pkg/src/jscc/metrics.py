"""Reconstruction quality metrics: MSE, PSNR, and multi-scale SSIM.

All functions take image batches shaped (B, H, W, C) in peak-range pixel
units (0..255 by default), compute in float64, and return one value per
image. MS-SSIM follows the usual multi-scale recipe: Gaussian 11x11 local
statistics, valid-mode windows, contrast/structure at every dyadic scale,
luminance only at the coarsest, exponents from the standard five-scale
weight vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import torch
import torch.nn.functional as F

PSNR_CAP_DB = 100.0

# Per-scale exponents of the standard five-scale configuration.
STANDARD_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class MsSsimParams:
    """Multi-scale SSIM configuration.

    ``weights`` holds one exponent per scale, applied identically to the
    luminance, contrast, and structure terms of its scale. Stabilizers are
    derived from the dynamic range: v1 = (0.01 A)^2, v2 = (0.03 A)^2,
    v3 = v2 / 2.
    """

    scales: int = 5
    weights: tuple[float, ...] = STANDARD_WEIGHTS
    window_size: int = 11
    window_sigma: float = 1.5
    peak: float = 255.0

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError("need at least one scale")
        if len(self.weights) != self.scales:
            raise ValueError(
                f"{self.scales} scales but {len(self.weights)} weights"
            )
        if any(w < 0 for w in self.weights):
            raise ValueError("scale weights must be nonnegative")
        if self.window_size % 2 != 1 or self.window_size < 3:
            raise ValueError("window size must be odd and >= 3")
        if not (self.window_sigma > 0 and self.peak > 0):
            raise ValueError("window sigma and peak must be positive")

    @property
    def v1(self) -> float:
        return (0.01 * self.peak) ** 2

    @property
    def v2(self) -> float:
        return (0.03 * self.peak) ** 2

    @property
    def v3(self) -> float:
        return self.v2 / 2.0

    def min_side(self) -> int:
        """Smallest image side supported by this scale count."""
        return self.window_size * 2 ** (self.scales - 1)

    @classmethod
    def default(cls, scales: int = 5, peak: float = 255.0) -> "MsSsimParams":
        """Standard weights truncated to ``scales`` and renormalized to sum 1."""
        if not 1 <= scales <= len(STANDARD_WEIGHTS):
            raise ValueError(f"scales must be in 1..{len(STANDARD_WEIGHTS)}")
        w = STANDARD_WEIGHTS[:scales]
        total = sum(w)
        return cls(scales=scales, weights=tuple(x / total for x in w), peak=peak)

    @classmethod
    def for_image(cls, height: int, width: int, peak: float = 255.0) -> "MsSsimParams":
        """Largest standard configuration that fits the given image size."""
        side = min(height, width)
        scales = 1
        while scales < len(STANDARD_WEIGHTS) and side >= 11 * 2**scales:
            scales += 1
        return cls.default(scales=scales, peak=peak)


def _check_batch_pair(x: torch.Tensor, x_hat: torch.Tensor) -> None:
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.ndim < 2:
        raise ValueError("expected a batch with at least one content dimension")


def mse(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Per-image mean squared pixel difference, shape (B,)."""
    _check_batch_pair(x, x_hat)
    diff = (x.to(torch.float64) - x_hat.to(torch.float64)).reshape(x.shape[0], -1)
    return diff.pow(2).mean(dim=-1)


def psnr(x: torch.Tensor, x_hat: torch.Tensor, peak: float = 255.0) -> torch.Tensor:
    """Peak signal-to-noise ratio in dB, capped at 100 dB, shape (B,).

    The cap keeps identical images (MSE = 0) and float-level residuals
    finite and summarizable.
    """
    if not peak > 0:
        raise ValueError("peak must be positive")
    err = mse(x, x_hat)
    db = torch.where(
        err > 0,
        10.0 * torch.log10(peak**2 / err.clamp_min(torch.finfo(torch.float64).tiny)),
        torch.full_like(err, PSNR_CAP_DB),
    )
    return db.clamp_max(PSNR_CAP_DB)


@lru_cache(maxsize=8)
def _gauss_kernel(size: int, sigma: float) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-coords.pow(2) / (2 * sigma**2))
    return g / g.sum()


def _local_stats(x, y, win_size, win_sigma):
    """Gaussian-window means/variances/covariance, valid windows only."""
    channels = x.shape[1]
    k = _gauss_kernel(win_size, win_sigma).to(x.device)
    row = k.reshape(1, 1, 1, -1).repeat(channels, 1, 1, 1)
    col = k.reshape(1, 1, -1, 1).repeat(channels, 1, 1, 1)

    def blur(t):
        t = F.conv2d(t, row, groups=channels)
        return F.conv2d(t, col, groups=channels)

    mu_x = blur(x)
    mu_y = blur(y)
    var_x = blur(x * x) - mu_x.pow(2)
    var_y = blur(y * y) - mu_y.pow(2)
    cov = blur(x * y) - mu_x * mu_y
    return mu_x, mu_y, var_x, var_y, cov


def _downsample(t: torch.Tensor) -> torch.Tensor:
    # Replicate-pad odd sides so the 2x2 mean never averages in zeros.
    pad_h = t.shape[-2] % 2
    pad_w = t.shape[-1] % 2
    if pad_h or pad_w:
        t = F.pad(t, (0, pad_w, 0, pad_h), mode="replicate")
    return F.avg_pool2d(t, kernel_size=2)


def _to_nchw(x: torch.Tensor) -> torch.Tensor:
    if x.ndim != 4:
        raise ValueError(f"expected (B, H, W, C) images, got shape {tuple(x.shape)}")
    return x.permute(0, 3, 1, 2).to(torch.float64)


def ms_ssim(x: torch.Tensor, x_hat: torch.Tensor, params: MsSsimParams | None = None) -> torch.Tensor:
    """Multi-scale structural similarity per image, shape (B,).

    Scale j contributes its mean contrast-structure map; the coarsest scale
    contributes the mean full SSIM map (luminance included). Negative scale
    means are clamped to zero before the fractional exponents.
    """
    if params is None:
        params = MsSsimParams()
    _check_batch_pair(x, x_hat)
    a = _to_nchw(x)
    b = _to_nchw(x_hat)
    side = min(a.shape[-2], a.shape[-1])
    if side < params.min_side():
        raise ValueError(
            f"image side {side} too small for {params.scales} scales "
            f"(needs >= {params.min_side()})"
        )

    v1, v2 = params.v1, params.v2
    per_scale = []
    for scale in range(params.scales):
        if scale > 0:
            a = _downsample(a)
            b = _downsample(b)
        mu_x, mu_y, var_x, var_y, cov = _local_stats(
            a, b, params.window_size, params.window_sigma
        )
        cs_map = (2 * cov + v2) / (var_x + var_y + v2)
        if scale == params.scales - 1:
            lum_map = (2 * mu_x * mu_y + v1) / (mu_x.pow(2) + mu_y.pow(2) + v1)
            cs_map = lum_map * cs_map
        per_scale.append(torch.relu(cs_map.mean(dim=(-2, -1))))

    weights = torch.tensor(params.weights, dtype=torch.float64)
    stacked = torch.stack(per_scale)  # (scales, B, C)
    return stacked.pow(weights.reshape(-1, 1, 1)).prod(dim=0).mean(dim=-1)


def ssim_components(
    x: torch.Tensor, x_hat: torch.Tensor, params: MsSsimParams | None = None
) -> list[dict[str, torch.Tensor]]:
    """Per-scale mean luminance/contrast/structure terms, one dict per scale.

    Exposes the decomposition (contrast uses standard deviations, structure
    the covariance) whose product equals the contrast-structure map used by
    :func:`ms_ssim` when v3 = v2 / 2. Values are per-image means, shape (B,).
    """
    if params is None:
        params = MsSsimParams()
    _check_batch_pair(x, x_hat)
    a = _to_nchw(x)
    b = _to_nchw(x_hat)
    v1, v2, v3 = params.v1, params.v2, params.v3
    out = []
    for scale in range(params.scales):
        if scale > 0:
            a = _downsample(a)
            b = _downsample(b)
        mu_x, mu_y, var_x, var_y, cov = _local_stats(
            a, b, params.window_size, params.window_sigma
        )
        sig_x = var_x.clamp_min(0).sqrt()
        sig_y = var_y.clamp_min(0).sqrt()
        lum = (2 * mu_x * mu_y + v1) / (mu_x.pow(2) + mu_y.pow(2) + v1)
        contrast = (2 * sig_x * sig_y + v2) / (var_x + var_y + v2)
        structure = (cov + v3) / (sig_x * sig_y + v3)
        out.append(
            {
                "luminance": lum.mean(dim=(1, 2, 3)),
                "contrast": contrast.mean(dim=(1, 2, 3)),
                "structure": structure.mean(dim=(1, 2, 3)),
            }
        )
    return out
