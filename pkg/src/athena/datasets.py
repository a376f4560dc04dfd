"""Dataset ingestion: IDX (MNIST container) parsing, a deterministic synthetic
digit fixture, and the ATHD binary fixture format for persisting datasets.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import Dataset, Image, image_from_grid
from .errors import (
    ArgumentError,
    DataConsistencyError,
    FileFormatError,
    TruncatedFileError,
)

IDX_IMAGES_MAGIC = 0x00000803  # unsigned-byte tensor, 3 dimensions
IDX_LABELS_MAGIC = 0x00000801  # unsigned-byte tensor, 1 dimension
ATHD_MAGIC = b"ATHD"


def _read_exact(buf: bytes, offset: int, count: int, path: str) -> bytes:
    if offset + count > len(buf):
        raise TruncatedFileError(f"{path}: expected {count} bytes at offset {offset}")
    return buf[offset : offset + count]


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Load an IDX image/label file pair into a Dataset.

    Pixel bytes are scaled by 1/255 into [0, 1]; sample order is preserved;
    the label alphabet is fixed at 10 classes.
    """
    images_path, labels_path = str(images_path), str(labels_path)
    img_buf = Path(images_path).read_bytes()
    lab_buf = Path(labels_path).read_bytes()

    header = _read_exact(img_buf, 0, 16, images_path)
    magic, count, rows, cols = struct.unpack(">IIII", header)
    if magic != IDX_IMAGES_MAGIC:
        raise FileFormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    pixels = _read_exact(img_buf, 16, count * rows * cols, images_path)

    lab_header = _read_exact(lab_buf, 0, 8, labels_path)
    lab_magic, lab_count = struct.unpack(">II", lab_header)
    if lab_magic != IDX_LABELS_MAGIC:
        raise FileFormatError(
            f"{labels_path}: bad magic 0x{lab_magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    if lab_count != count:
        raise DataConsistencyError(
            f"image count {count} != label count {lab_count}"
        )
    labels = np.frombuffer(_read_exact(lab_buf, 8, count, labels_path), dtype=np.uint8)

    raw = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows, cols)
    scaled = raw.astype(np.float64) / 255.0
    images = tuple(
        Image(height=rows, width=cols, channels=1, data=scaled[i].ravel())
        for i in range(count)
    )
    return Dataset(images=images, labels=tuple(int(v) for v in labels), num_classes=10)


def save_idx(dataset: Dataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Write a dataset back out as an IDX pair (intensities re-quantized to u8)."""
    if not dataset.images:
        raise ArgumentError("cannot write an empty dataset")
    h, w, c = dataset.image_shape
    if c != 1:
        raise ArgumentError("IDX fixture writer handles single-channel images only")
    quantized = np.stack(
        [np.rint(im.data * 255.0).astype(np.uint8) for im in dataset.images]
    )
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(dataset), h, w))
        f.write(quantized.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(dataset)))
        f.write(np.asarray(dataset.labels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Synthetic digits: a deterministic, download-free stand-in for MNIST-format
# data. Ten glyph classes on a 28x28 grid, rendered from segment skeletons
# with per-sample affine jitter, stroke-weight variation, and pixel noise.
# ---------------------------------------------------------------------------

_SEGS = {
    "A": ((0.25, 0.16), (0.75, 0.16)),
    "B": ((0.75, 0.16), (0.75, 0.50)),
    "C": ((0.75, 0.50), (0.75, 0.84)),
    "D": ((0.25, 0.84), (0.75, 0.84)),
    "E": ((0.25, 0.50), (0.25, 0.84)),
    "F": ((0.25, 0.16), (0.25, 0.50)),
    "G": ((0.25, 0.50), (0.75, 0.50)),
}

_DIGIT_SEGMENTS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGECD",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}

_SIDE = 28


def _render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(-0.21, 0.21)  # ~12 degrees
    scale = rng.uniform(0.85, 1.1)
    shear = rng.uniform(-0.15, 0.15)
    tx, ty = rng.uniform(-2.5, 2.5, size=2)
    # stroke thick enough that a 3x3 grayscale erosion keeps the glyph legible
    thick = rng.uniform(1.7, 2.3)
    amp = rng.uniform(0.75, 1.0)
    sigma = rng.uniform(0.02, 0.08)

    cos_t, sin_t = np.cos(theta), np.sin(theta)
    span = _SIDE - 1

    def warp(p):
        x, y = p[0] - 0.5, p[1] - 0.5
        x = x + shear * y
        xr = scale * (cos_t * x - sin_t * y) + 0.5
        yr = scale * (sin_t * x + cos_t * y) + 0.5
        return np.array([xr * span + tx, yr * span + ty])

    cols, rows = np.meshgrid(np.arange(_SIDE, dtype=np.float64),
                             np.arange(_SIDE, dtype=np.float64))
    pts = np.stack([cols.ravel(), rows.ravel()], axis=1)

    dist = np.full(pts.shape[0], np.inf)
    for name in _DIGIT_SEGMENTS[digit]:
        a = warp(_SEGS[name][0])
        b = warp(_SEGS[name][1])
        ab = b - a
        denom = float(ab @ ab)
        t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(pts))
        closest = a + t[:, None] * ab
        dist = np.minimum(dist, np.linalg.norm(pts - closest, axis=1))

    stroke = np.clip((thick - dist) / 0.7, 0.0, 1.0) * amp
    noisy = stroke + rng.normal(0.0, sigma, size=stroke.shape)
    return np.clip(noisy, 0.0, 1.0).reshape(_SIDE, _SIDE)


def synth_digits(seed: int, n: int) -> Dataset:
    """Deterministic 28x28 single-channel digit fixture.

    Classes cycle 0..9 so every class count is within one of n/10. Sample i is
    rendered from an RNG keyed on (seed, i), so calls with equal arguments are
    bit-identical and subsets are stable under changes of ``n``.
    """
    if n < 10:
        raise ArgumentError(f"need n >= 10, got {n}")
    images = []
    labels = []
    for i in range(n):
        digit = i % 10
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, i]))
        images.append(image_from_grid(_render_digit(digit, rng)))
        labels.append(digit)
    return Dataset(images=tuple(images), labels=tuple(labels), num_classes=10)


# ---------------------------------------------------------------------------
# ATHD fixture format. Layout (little-endian):
#   4 bytes  magic "ATHD"
#   u32 x 6  version(=1), count, height, width, channels, num_classes
#   u32 x N  labels
#   f64 x N*H*W*C  pixel intensities
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    if not dataset.images:
        raise ArgumentError("cannot write an empty dataset")
    h, w, c = dataset.image_shape
    with open(path, "wb") as f:
        f.write(ATHD_MAGIC)
        f.write(struct.pack("<6I", 1, len(dataset), h, w, c, dataset.num_classes))
        f.write(np.asarray(dataset.labels, dtype=np.uint32).tobytes())
        f.write(dataset.stack().astype(np.float64).tobytes())


def load_dataset(path: str | Path) -> Dataset:
    buf = Path(path).read_bytes()
    path = str(path)
    if _read_exact(buf, 0, 4, path) != ATHD_MAGIC:
        raise FileFormatError(f"{path}: not an ATHD fixture")
    version, count, h, w, c, num_classes = struct.unpack(
        "<6I", _read_exact(buf, 4, 24, path)
    )
    if version != 1:
        raise FileFormatError(f"{path}: unsupported ATHD version {version}")
    off = 28
    labels = np.frombuffer(_read_exact(buf, off, 4 * count, path), dtype=np.uint32)
    off += 4 * count
    pixels = np.frombuffer(
        _read_exact(buf, off, 8 * count * h * w * c, path), dtype=np.float64
    ).reshape(count, h * w * c)
    images = tuple(Image(h, w, c, pixels[i].copy()) for i in range(count))
    return Dataset(images=images, labels=tuple(int(v) for v in labels),
                   num_classes=num_classes)
