"""Dataset handling: directory loading, hash-stable train/validation split,
seeded shuffling and random crops.

Images are decoded with Pillow to exact RGB pixel values (no resampling);
the split assignment depends only on (seed, relative filename), never on
directory enumeration order or platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image

from .codec import ImageBatch, PIXEL_PEAK

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
MIN_IMAGES = 10


class DataError(ValueError):
    """Raised for unreadable datasets or invalid crop/batch requests."""


@dataclass(frozen=True)
class DatasetSpec:
    root: str
    crop_size: int = 128
    train_fraction: float = 0.9
    seed: int = 0
    eval_mode: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train fraction must lie in (0, 1)")
        if self.crop_size < 1:
            raise ValueError("crop size must be positive")


def load_image(path: str | Path) -> torch.Tensor:
    """Decode one image to a float32 (H, W, 3) tensor in [0, 255]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return torch.from_numpy(arr.astype(np.float32))


class ImageSet:
    """An ordered list of image paths with lazy, cached decoding."""

    def __init__(self, paths: Sequence[Path]):
        self.paths = list(paths)
        self._cache: dict[int, torch.Tensor] = {}

    def __len__(self) -> int:
        return len(self.paths)

    def image(self, idx: int) -> torch.Tensor:
        if idx not in self._cache:
            self._cache[idx] = load_image(self.paths[idx])
        return self._cache[idx]


def _split_key(seed: int, name: str) -> str:
    return hashlib.sha256(f"{seed}:{name}".encode()).hexdigest()


def load_split(spec: DatasetSpec) -> tuple[ImageSet, ImageSet]:
    """Deterministically partition the image directory into train/validation.

    Files are ranked by a seeded hash of their relative path; the lowest
    round(N * (1 - train_fraction)) of them form the validation set. The
    assignment is stable across platforms and listing orders.
    """
    root = Path(spec.root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    paths = sorted(
        p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )
    if len(paths) < MIN_IMAGES:
        raise DataError(
            f"need at least {MIN_IMAGES} images under {root}, found {len(paths)}"
        )
    ranked = sorted(paths, key=lambda p: (_split_key(spec.seed, p.relative_to(root).as_posix()), p.name))
    n_val = max(1, round(len(paths) * (1.0 - spec.train_fraction)))
    val = ranked[:n_val]
    train = ranked[n_val:]
    return (
        ImageSet(sorted(train)),
        ImageSet(sorted(val)),
    )


def _crop(img: torch.Tensor, size: int, top: int, left: int) -> torch.Tensor:
    return img[top : top + size, left : left + size, :]


def batches(
    dataset: ImageSet,
    batch_size: int,
    crop_size: int,
    seed: int,
    epoch: int = 0,
) -> Iterator[ImageBatch]:
    """One epoch of shuffled, randomly cropped batches.

    Order and crop offsets derive only from (seed, epoch); the final short
    batch is kept. Crops copy pixel values untouched.
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if batch_size < 1:
        raise DataError("batch size must be >= 1")
    for img_idx in range(len(dataset)):
        img = dataset.image(img_idx)
        if img.shape[0] < crop_size or img.shape[1] < crop_size:
            raise DataError(
                f"image {dataset.paths[img_idx]} is smaller than the {crop_size} crop"
            )
    gen = torch.Generator().manual_seed(_mix_seed(seed, epoch))
    order = torch.randperm(len(dataset), generator=gen).tolist()
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        crops = []
        for img_idx in chunk:
            img = dataset.image(img_idx)
            max_top = img.shape[0] - crop_size
            max_left = img.shape[1] - crop_size
            top = int(torch.randint(0, max_top + 1, (1,), generator=gen))
            left = int(torch.randint(0, max_left + 1, (1,), generator=gen))
            crops.append(_crop(img, crop_size, top, left))
        yield ImageBatch(pixels=torch.stack(crops), peak=PIXEL_PEAK)


def _mix_seed(seed: int, epoch: int) -> int:
    # SplitMix-style mix keeps per-epoch streams independent of each other.
    x = (seed * 0x9E3779B97F4A7C15 + epoch + 1) % (1 << 64)
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) % (1 << 64)
    x ^= x >> 27
    return x % (1 << 63)


def pad_to_multiple(img: torch.Tensor, multiple: int) -> tuple[torch.Tensor, int, int]:
    """Reflect-pad an (H, W, C) image so both sides divide ``multiple``.

    Returns the padded image and the original height/width, so callers can
    crop reconstructions back before computing metrics.
    """
    h, w = img.shape[0], img.shape[1]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return img, h, w
    if pad_h >= h or pad_w >= w:
        raise DataError(
            f"image {h}x{w} too small to reflect-pad to a multiple of {multiple}"
        )
    chw = img.permute(2, 0, 1).unsqueeze(0)
    padded = torch.nn.functional.pad(chw, (0, pad_w, 0, pad_h), mode="reflect")
    return padded.squeeze(0).permute(1, 2, 0), h, w
