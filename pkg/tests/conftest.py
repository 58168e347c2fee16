"""Shared fixtures: synthetic image datasets and toy trained pipelines.

The expensive session fixtures (trained models) are built lazily, so unit
test modules stay fast when run on their own.
"""

import numpy as np
import pytest
import torch
from PIL import Image

from jscc.codec import CodecConfig, ImageBatch
from jscc.data import DatasetSpec, ImageSet, load_split
from jscc.harness import evaluate_model
from jscc.training import TrainConfig, train

TREND_SNRS = (1.0, 4.0, 7.0, 10.0, 13.0)
TREND_TRAIN_SNR = 10.0


def make_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """A structured random image: smooth color field, gradients, rectangles."""
    low = (rng.random((4, 4, 3)) * 255).astype(np.uint8)
    img = np.asarray(
        Image.fromarray(low).resize((size, size), Image.BILINEAR), dtype=np.float32
    )
    img = img * 0.6
    img += np.linspace(0.0, rng.random() * 80.0, size)[None, :, None]
    img += np.linspace(0.0, rng.random() * 80.0, size)[:, None, None]
    for _ in range(2):
        x0, y0 = rng.integers(0, size - 8, size=2)
        w, h = rng.integers(4, max(5, size // 3), size=2)
        img[y0 : y0 + h, x0 : x0 + w] *= 0.3
        img[y0 : y0 + h, x0 : x0 + w] += rng.random(3) * 170.0
    return np.clip(img, 0, 255).astype(np.uint8)


def write_image_dir(path, count: int, size: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    path.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        Image.fromarray(make_image(rng, size)).save(path / f"img_{i:03d}.png")


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """110 structured 48x48 images for split/trend experiments."""
    root = tmp_path_factory.mktemp("imgs") / "set"
    write_image_dir(root, 110, 48, seed=2024)
    return root


@pytest.fixture(scope="session")
def overfit_dir(tmp_path_factory):
    """100 structured 32x32 images for the memorization experiment."""
    root = tmp_path_factory.mktemp("overfit") / "set"
    write_image_dir(root, 100, 32, seed=7)
    return root


@pytest.fixture(scope="session")
def toy_codec_cfg():
    return CodecConfig(c_out=8, base_width=24, downsample_factor=2)


@pytest.fixture(scope="session")
def trend_split(dataset_dir):
    return load_split(DatasetSpec(root=str(dataset_dir), crop_size=32, seed=11))


def train_trend_model(quantizer_kind, modulation_order, codec_cfg, split, epochs=40):
    """One toy run of the shared trend budget (same seed/schedule for all)."""
    train_set, val_set = split
    cfg = TrainConfig(
        quantizer_kind=quantizer_kind,
        modulation_order=modulation_order,
        channel_kind="static_awgn",
        snr_train_db=TREND_TRAIN_SNR,
        batch_size=16,
        crop_size=32,
        lr_init=1e-3,
        max_epochs=epochs,
        lr_patience=8,
        early_stop_patience=10_000,
        seed=5,
    )
    return cfg, train(cfg, codec_cfg, train_set, val_set)


@pytest.fixture(scope="session")
def trend_models(toy_codec_cfg, trend_split):
    """Matched-budget toy models: M in {4, 16, 64} plus the unquantized one."""
    out = {}
    for key, (kind, order) in {
        "m4": ("qam_fixed", 4),
        "m16": ("qam_fixed", 16),
        "m64": ("qam_fixed", 64),
        "unquantized": ("unquantized", 4),
    }.items():
        out[key] = train_trend_model(kind, order, toy_codec_cfg, trend_split)
    return out


@pytest.fixture(scope="session")
def trend_eval(trend_models, trend_split):
    """Mean/std PSNR of every trend model over the shared SNR grid."""
    _, val_set = trend_split
    rows = {}
    for key, (cfg, result) in trend_models.items():
        rows[key] = evaluate_model(
            result.codec,
            result.quantizer,
            cfg,
            val_set,
            snrs_db=TREND_SNRS,
            channel_kind="static_awgn",
            metric="psnr",
            draws=10,
            eval_seed=99,
        )
    return rows


def batch_from(image_set: ImageSet, count: int) -> ImageBatch:
    n = min(count, len(image_set))
    return ImageBatch(pixels=torch.stack([image_set.image(i) for i in range(n)]))
