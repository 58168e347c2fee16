import shutil

import numpy as np
import pytest
import torch
from PIL import Image

from jscc.data import (
    DataError,
    DatasetSpec,
    ImageSet,
    batches,
    load_image,
    load_split,
    pad_to_multiple,
)

from conftest import write_image_dir


@pytest.fixture(scope="module")
def hundred_images(tmp_path_factory):
    root = tmp_path_factory.mktemp("data100") / "set"
    write_image_dir(root, 100, 40, seed=5)
    return root


class TestLoadSplit:
    def test_ninety_ten_disjoint(self, hundred_images):
        train, val = load_split(DatasetSpec(root=str(hundred_images), crop_size=16))
        assert len(train) == 90
        assert len(val) == 10
        assert set(train.paths).isdisjoint(set(val.paths))

    def test_same_seed_same_partition(self, hundred_images):
        spec = DatasetSpec(root=str(hundred_images), crop_size=16, seed=3)
        a = load_split(spec)
        b = load_split(spec)
        assert [p.name for p in a[0].paths] == [p.name for p in b[0].paths]
        assert [p.name for p in a[1].paths] == [p.name for p in b[1].paths]

    def test_different_seed_changes_partition(self, hundred_images):
        a = load_split(DatasetSpec(root=str(hundred_images), crop_size=16, seed=0))
        b = load_split(DatasetSpec(root=str(hundred_images), crop_size=16, seed=1))
        assert {p.name for p in a[1].paths} != {p.name for p in b[1].paths}

    def test_split_stable_under_relocation(self, hundred_images, tmp_path):
        # hash keys use paths relative to the root, so moving the directory
        # must not change the assignment
        copy_root = tmp_path / "elsewhere" / "set"
        shutil.copytree(hundred_images, copy_root)
        a = load_split(DatasetSpec(root=str(hundred_images), crop_size=16, seed=7))
        b = load_split(DatasetSpec(root=str(copy_root), crop_size=16, seed=7))
        assert [p.name for p in a[1].paths] == [p.name for p in b[1].paths]

    def test_below_minimum_rejected(self, tmp_path):
        root = tmp_path / "tiny"
        write_image_dir(root, 5, 24, seed=1)
        with pytest.raises(DataError):
            load_split(DatasetSpec(root=str(root), crop_size=16))

    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_split(DatasetSpec(root=str(tmp_path / "nope"), crop_size=16))


class TestBatches:
    def test_batch_sizes_with_remainder(self, hundred_images):
        train, _ = load_split(DatasetSpec(root=str(hundred_images), crop_size=16))
        sizes = [b.batch_size for b in batches(train, 32, 16, seed=0, epoch=0)]
        assert sizes == [32, 32, 26]

    def test_crop_equal_to_image_is_identity(self, hundred_images):
        train, _ = load_split(DatasetSpec(root=str(hundred_images), crop_size=40))
        batch = next(iter(batches(train, 4, 40, seed=0, epoch=0)))
        # find which source image the first crop corresponds to
        first = batch.pixels[0]
        matches = [
            i for i in range(len(train)) if torch.equal(train.image(i), first)
        ]
        assert len(matches) == 1

    def test_same_seed_identical_crops(self, hundred_images):
        train, _ = load_split(DatasetSpec(root=str(hundred_images), crop_size=16))
        a = [b.pixels for b in batches(train, 8, 16, seed=9, epoch=2)]
        b = [b.pixels for b in batches(train, 8, 16, seed=9, epoch=2)]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.numpy(), y.numpy())

    def test_epochs_differ(self, hundred_images):
        train, _ = load_split(DatasetSpec(root=str(hundred_images), crop_size=16))
        a = next(iter(batches(train, 8, 16, seed=9, epoch=0))).pixels
        b = next(iter(batches(train, 8, 16, seed=9, epoch=1))).pixels
        assert not torch.equal(a, b)

    def test_crop_larger_than_image_rejected(self, hundred_images):
        train, _ = load_split(DatasetSpec(root=str(hundred_images), crop_size=16))
        with pytest.raises(DataError):
            next(iter(batches(train, 8, 64, seed=0, epoch=0)))


class TestPixelFidelity:
    def test_png_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, size=(21, 17, 3), dtype=np.uint8)
        p = tmp_path / "a.png"
        Image.fromarray(arr).save(p)
        loaded = load_image(p)
        np.testing.assert_array_equal(loaded.numpy().astype(np.uint8), arr)
        # save what we loaded and reload: still identical
        p2 = tmp_path / "b.png"
        Image.fromarray(loaded.numpy().astype(np.uint8)).save(p2)
        np.testing.assert_array_equal(load_image(p2).numpy(), loaded.numpy())


class TestPadding:
    def test_no_padding_when_divisible(self):
        img = torch.rand(32, 48, 3)
        padded, h, w = pad_to_multiple(img, 16)
        assert padded.shape == img.shape
        assert (h, w) == (32, 48)

    def test_reflect_pad_and_region_preserved(self):
        img = torch.rand(30, 45, 3)
        padded, h, w = pad_to_multiple(img, 16)
        assert padded.shape == (32, 48, 3)
        np.testing.assert_array_equal(padded[:30, :45, :].numpy(), img.numpy())

    def test_too_small_to_reflect_rejected(self):
        with pytest.raises(DataError):
            pad_to_multiple(torch.rand(3, 3, 3), 16)


class TestDatasetSpec:
    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            DatasetSpec(root=".", train_fraction=1.0)

    def test_invalid_crop(self):
        with pytest.raises(ValueError):
            DatasetSpec(root=".", crop_size=0)
