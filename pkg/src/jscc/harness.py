"""Experiment harness: train from a config file, sweep checkpoints over SNR,
and export constellation tables.

Every artifact is a plain CSV with a fixed header and dot-decimal floats;
in determinism mode the resolved config snapshot plus the seeds pin each
output byte.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional, Sequence

import torch

from . import channel as ch
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    rebuild,
    save_checkpoint,
)
from .codec import Codec, ImageBatch
from .config import (
    ExperimentConfig,
    load_config,
    resolve,
    serialize,
    to_codec_config,
    to_dataset_spec,
    to_train_config,
)
from .constellation import estimate_distribution, export_csv_rows
from .data import DataError, ImageSet, IMAGE_SUFFIXES, load_split, pad_to_multiple, _mix_seed
from .metrics import MsSsimParams, ms_ssim, psnr
from .quantizer import SoftHardQuantizer
from .training import TrainConfig, forward_pipeline, history_csv_rows, train

DEVICE_ENV_VAR = "JSCC_DEVICE"


def select_device() -> torch.device:
    """Device from the environment, defaulting to CPU."""
    name = os.environ.get(DEVICE_ENV_VAR, "cpu")
    device = torch.device(name)
    if device.type == "cuda" and not torch.cuda.is_available():
        raise RuntimeError(f"{DEVICE_ENV_VAR}={name} but CUDA is unavailable")
    return device


def _write_text(path: Path, lines: Sequence[str] | str) -> None:
    text = lines if isinstance(lines, str) else "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def load_eval_set(root: str | Path) -> ImageSet:
    """All images under a directory, sorted by path (no split, no minimum
    beyond nonemptiness)."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"evaluation root {root} is not a directory")
    paths = sorted(
        p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )
    if not paths:
        raise DataError(f"no images under {root}")
    return ImageSet(paths)


def run_train(config_path: str | Path, out_dir: str | Path) -> dict[str, Path]:
    """Train per the config file; write checkpoint, history CSV, and the
    resolved-config snapshot into ``out_dir``."""
    cfg = resolve(load_config(config_path))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    device = select_device()
    train_set, val_set = load_split(to_dataset_spec(cfg))
    train_cfg = to_train_config(cfg)
    codec_cfg = to_codec_config(cfg)
    result = train(train_cfg, codec_cfg, train_set, val_set, device=device)

    paths = {
        "checkpoint": out / "checkpoint.pt",
        "history": out / "history.csv",
        "config": out / "config_resolved.txt",
    }
    save_checkpoint(paths["checkpoint"], result, codec_cfg, train_cfg)
    _write_text(paths["history"], history_csv_rows(result.history))
    _write_text(paths["config"], serialize(cfg))
    return paths


def _image_metric(metric: str, x: torch.Tensor, x_hat: torch.Tensor, peak: float) -> float:
    ref = x.unsqueeze(0)
    rec = x_hat.unsqueeze(0)
    if metric == "psnr":
        return float(psnr(ref, rec, peak=peak)[0])
    params = MsSsimParams.for_image(x.shape[0], x.shape[1], peak=peak)
    return float(ms_ssim(ref, rec, params)[0])


def evaluate_model(
    codec: Codec,
    quantizer: Optional[SoftHardQuantizer],
    train_cfg: TrainConfig,
    images: ImageSet,
    snrs_db: Sequence[float],
    channel_kind: str,
    metric: str = "psnr",
    draws: int = 10,
    eval_seed: int = 1234,
) -> list[tuple[float, float, float]]:
    """Sweep test SNRs; returns (snr, mean, std) rows in ascending SNR order.

    Each image is reflect-padded to the codec's stride, transmitted ``draws``
    times with a per-image random stream derived from ``eval_seed``, and its
    metric is averaged over draws before the dataset mean/std are taken.
    """
    if len(images) == 0:
        raise DataError("evaluation dataset is empty")
    if draws < 1:
        raise ValueError("need at least one channel draw per image")
    codec.eval()
    factor = codec.cfg.downsample_factor
    rows = []
    for snr_idx, snr in enumerate(sorted(snrs_db)):
        scenario = ch.ChannelScenario(
            kind=channel_kind, snr_db=snr, power_budget=train_cfg.power_budget
        )
        per_image = []
        with torch.no_grad():
            for img_idx in range(len(images)):
                original = images.image(img_idx)
                padded, h, w = pad_to_multiple(original, factor)
                batch = ImageBatch(pixels=padded.unsqueeze(0))
                gen = torch.Generator().manual_seed(
                    _mix_seed(eval_seed, img_idx * 1000003 + snr_idx)
                )
                acc = 0.0
                for _ in range(draws):
                    x_hat, _, _ = forward_pipeline(
                        codec, quantizer, scenario, batch, gen
                    )
                    rec = x_hat.pixels[0, :h, :w, :].cpu()
                    acc += _image_metric(metric, original, rec, batch.peak)
                per_image.append(acc / draws)
        values = torch.tensor(per_image, dtype=torch.float64)
        rows.append((float(snr), float(values.mean()), float(values.std(correction=0))))
    return rows


def sweep_csv_rows(rows: Sequence[tuple[float, float, float]]) -> list[str]:
    out = ["snr,metric_mean,metric_std"]
    for snr, mean, std in rows:
        out.append(f"{snr!r},{mean!r},{std!r}")
    return out


def write_sweep_plot(
    rows: Sequence[tuple[float, float, float]], out_path: str | Path, metric: str
) -> Path:
    """Convenience errorbar plot of a sweep; the CSV remains the contract."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RuntimeError("plot output needs matplotlib installed") from exc
    finite = [(s, m, d) for s, m, d in rows if s != float("inf")]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if finite:
        snrs, means, stds = zip(*finite)
        ax.errorbar(snrs, means, yerr=stds, marker="o", capsize=3)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel({"psnr": "PSNR (dB)", "msssim": "MS-SSIM"}.get(metric, metric))
    ax.grid(True, alpha=0.4)
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _check_compatible(cfg: ExperimentConfig, train_cfg: TrainConfig, codec_cfg) -> None:
    """Reject eval configs that explicitly contradict the checkpoint."""
    defaults = ExperimentConfig()
    pairs = [
        ("modulation_order", train_cfg.modulation_order),
        ("quantizer", train_cfg.quantizer_kind),
        ("metric", train_cfg.metric_target),
        ("c_out", codec_cfg.c_out),
        ("base_width", codec_cfg.base_width),
        ("downsample_factor", codec_cfg.downsample_factor),
        ("power_budget", train_cfg.power_budget),
    ]
    for key, expected in pairs:
        requested = getattr(cfg, key)
        if requested != getattr(defaults, key) and requested != expected:
            raise CheckpointError(
                f"config requests {key}={requested!r} but the checkpoint "
                f"was trained with {key}={expected!r}"
            )


def run_eval(
    checkpoint_path: str | Path,
    config_path: str | Path,
    out_path: str | Path,
    plot: bool = False,
) -> Path:
    """Evaluate a checkpoint over the configured SNR sweep; write the CSV
    (and optionally a PNG rendered from it)."""
    cfg = resolve(load_config(config_path))
    codec, quantizer, train_cfg, codec_cfg, _ = rebuild(load_checkpoint(checkpoint_path))
    _check_compatible(cfg, train_cfg, codec_cfg)
    device = select_device()
    codec.to(device)
    if quantizer is not None:
        quantizer.to(device)
    images = load_eval_set(cfg.data_root)
    metric = cfg.eval_metric or train_cfg.metric_target
    rows = evaluate_model(
        codec,
        quantizer,
        train_cfg,
        images,
        snrs_db=cfg.eval_snrs_db,
        channel_kind=cfg.channel,
        metric=metric,
        draws=cfg.eval_draws,
        eval_seed=cfg.eval_seed,
    )
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_text(out, sweep_csv_rows(rows))
    if plot:
        write_sweep_plot(rows, out.with_suffix(".png"), metric)
    return out


def reference_distribution(
    codec: Codec,
    quantizer: SoftHardQuantizer,
    images: ImageSet,
    sample_size: int = 8,
):
    """Soft-assignment symbol distribution over a fixed reference sample."""
    codec.eval()
    factor = codec.cfg.downsample_factor
    weight_rows = []
    with torch.no_grad():
        for img_idx in range(min(sample_size, len(images))):
            padded, _, _ = pad_to_multiple(images.image(img_idx), factor)
            z = codec.encode(ImageBatch(pixels=padded.unsqueeze(0))).z
            weight_rows.append(quantizer.soft_assignments(z).reshape(-1, quantizer.order))
    return estimate_distribution(torch.cat(weight_rows, dim=0))


def dump_constellation(
    checkpoint_path: str | Path, config_path: str | Path, out_path: str | Path
) -> Path:
    """Write the ``real,imag,prob`` table for a quantized checkpoint."""
    cfg = resolve(load_config(config_path))
    codec, quantizer, train_cfg, codec_cfg, _ = rebuild(load_checkpoint(checkpoint_path))
    if quantizer is None:
        raise CheckpointError(
            "checkpoint holds an unquantized model: no constellation to dump"
        )
    _check_compatible(cfg, train_cfg, codec_cfg)
    images = load_eval_set(cfg.data_root)
    dist = reference_distribution(codec, quantizer, images, cfg.constellation_batch)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_text(out, export_csv_rows(quantizer.constellation, dist))
    return out
