import os
import struct
from pathlib import Path

import numpy as np
import pytest

from athena.datasets import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    load_dataset,
    load_idx,
    save_dataset,
    save_idx,
    synth_digits,
)
from athena.errors import (
    ArgumentError,
    DataConsistencyError,
    FileFormatError,
    TruncatedFileError,
)


def write_idx_pair(tmp_path, pixels, labels, image_magic=IDX_IMAGES_MAGIC,
                   label_magic=IDX_LABELS_MAGIC, truncate_images=0):
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, h, w = pixels.shape
    img_path = tmp_path / "images.idx"
    lab_path = tmp_path / "labels.idx"
    raw = struct.pack(">IIII", image_magic, n, h, w) + pixels.tobytes()
    if truncate_images:
        raw = raw[:-truncate_images]
    img_path.write_bytes(raw)
    lab_path.write_bytes(
        struct.pack(">II", label_magic, len(labels))
        + np.asarray(labels, dtype=np.uint8).tobytes()
    )
    return img_path, lab_path


class TestLoadIdx:
    def test_byte_scaling(self, tmp_path):
        pixels = np.zeros((2, 28, 28), dtype=np.uint8)
        pixels[0, 0, 0] = 255
        pixels[1, 5, 7] = 255
        img, lab = write_idx_pair(tmp_path, pixels, [3, 7])
        ds = load_idx(img, lab)
        assert len(ds) == 2 and ds.num_classes == 10
        assert ds.labels == (3, 7)
        vals = set(np.unique(ds.images[0].data))
        assert vals == {0.0, 1.0}

    def test_wrong_magic_rejected(self, tmp_path):
        pixels = np.zeros((1, 28, 28), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, pixels, [0],
                                  label_magic=IDX_IMAGES_MAGIC)
        with pytest.raises(FileFormatError):
            load_idx(img, lab)

    def test_count_mismatch_rejected(self, tmp_path):
        pixels = np.zeros((2, 28, 28), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, pixels, [0, 1, 2])
        with pytest.raises(DataConsistencyError):
            load_idx(img, lab)

    def test_truncated_rejected(self, tmp_path):
        pixels = np.zeros((2, 28, 28), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, pixels, [0, 1], truncate_images=10)
        with pytest.raises(TruncatedFileError):
            load_idx(img, lab)

    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        pixels = rng.integers(0, 256, size=(3, 28, 28), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, pixels, [1, 2, 3])
        ds = load_idx(img, lab)
        save_idx(ds, tmp_path / "im2.idx", tmp_path / "lb2.idx")
        assert (tmp_path / "im2.idx").read_bytes() == Path(img).read_bytes()
        assert (tmp_path / "lb2.idx").read_bytes() == Path(lab).read_bytes()

    @pytest.mark.skipif(
        "ATHENA_MNIST_DIR" not in os.environ,
        reason="set ATHENA_MNIST_DIR to a directory with the official test files",
    )
    def test_official_test_files(self):
        root = Path(os.environ["ATHENA_MNIST_DIR"])
        ds = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte")
        assert len(ds) == 10000
        assert ds.num_classes == 10


class TestSynthDigits:
    def test_deterministic(self):
        a = synth_digits(seed=7, n=100)
        b = synth_digits(seed=7, n=100)
        for im_a, im_b in zip(a.images, b.images):
            np.testing.assert_array_equal(im_a.data, im_b.data)
        assert a.labels == b.labels

    def test_class_balance(self):
        ds = synth_digits(seed=7, n=100)
        counts = np.bincount(ds.label_array(), minlength=10)
        assert all(c == 10 for c in counts)

    def test_balance_within_one_for_uneven_n(self):
        ds = synth_digits(seed=1, n=23)
        counts = np.bincount(ds.label_array(), minlength=10)
        assert counts.max() - counts.min() <= 1

    def test_seeds_differ(self):
        a = synth_digits(seed=1, n=50)
        b = synth_digits(seed=2, n=50)
        assert any(
            np.any(im_a.data != im_b.data) for im_a, im_b in zip(a.images, b.images)
        )

    def test_small_n_rejected(self):
        with pytest.raises(ArgumentError):
            synth_digits(seed=0, n=9)

    def test_shapes_and_range(self):
        ds = synth_digits(seed=3, n=10)
        for im in ds.images:
            assert im.shape == (28, 28, 1)
            assert im.data.min() >= 0.0 and im.data.max() <= 1.0


class TestAthdFixture:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = synth_digits(seed=9, n=12)
        path = tmp_path / "digits.athd"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.labels == ds.labels
        assert back.num_classes == ds.num_classes
        for a, b in zip(ds.images, back.images):
            np.testing.assert_array_equal(a.data, b.data)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.athd"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FileFormatError):
            load_dataset(path)
