"""Core data model: images, labels, datasets, perturbation budgets, and the
metrics / ball projections shared by every other module.

All pixel intensities are float64 in [0, 1]. Types are immutable after
construction and operations are pure, so everything here is safe to share
across worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ArgumentError, DegenerateInputError

# Norm tags for perturbation budgets.
L0 = "l0"
L2 = "l2"
LINF = "linf"
_NORMS = (L0, L2, LINF)


@dataclass(frozen=True)
class Image:
    """A dense H x W x C grid of intensities in [0, 1], stored row-major.

    ``data`` is a flat, read-only float64 array of length H*W*C.
    """

    height: int
    width: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ArgumentError("image dimensions must be positive")
        if self.channels not in (1, 3):
            raise ArgumentError(f"channels must be 1 or 3, got {self.channels}")
        arr = np.ascontiguousarray(self.data, dtype=np.float64).ravel()
        if arr.size != self.height * self.width * self.channels:
            raise ArgumentError(
                f"data length {arr.size} != H*W*C = "
                f"{self.height * self.width * self.channels}"
            )
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("image intensities must be finite")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ArgumentError("image intensities must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def grid(self) -> np.ndarray:
        """Read-only (H, W, C) view of the pixel data."""
        return self.data.reshape(self.height, self.width, self.channels)

    def same_shape(self, other: "Image") -> bool:
        return self.shape == other.shape


def image_from_grid(grid: np.ndarray, clip: bool = False) -> Image:
    """Build an Image from an (H, W) or (H, W, C) array.

    With ``clip=True`` values are clamped into [0, 1] first; otherwise
    out-of-range values raise.
    """
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ArgumentError(f"expected 2-D or 3-D pixel grid, got ndim={arr.ndim}")
    if clip:
        arr = np.clip(arr, 0.0, 1.0)
    h, w, c = arr.shape
    return Image(height=h, width=w, channels=c, data=arr.ravel())


@dataclass(frozen=True)
class Label:
    """An integer class index in [0, num_classes)."""

    value: int

    def __post_init__(self):
        if int(self.value) != self.value or self.value < 0:
            raise ArgumentError(f"label must be a nonnegative integer, got {self.value}")
        object.__setattr__(self, "value", int(self.value))


@dataclass(frozen=True)
class Dataset:
    """A list of uniformly shaped images with integer labels."""

    images: tuple[Image, ...]
    labels: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        images = tuple(self.images)
        labels = tuple(int(v) for v in self.labels)
        if len(images) != len(labels):
            raise ArgumentError(
                f"{len(images)} images vs {len(labels)} labels"
            )
        if self.num_classes <= 0:
            raise ArgumentError("num_classes must be positive")
        if images:
            shape = images[0].shape
            for im in images:
                if im.shape != shape:
                    raise ArgumentError("dataset images must share one shape")
        for v in labels:
            if not 0 <= v < self.num_classes:
                raise ArgumentError(f"label {v} outside [0, {self.num_classes})")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        if not self.images:
            raise DegenerateInputError("empty dataset has no image shape")
        return self.images[0].shape

    def stack(self) -> np.ndarray:
        """(N, H*W*C) float64 matrix of all images."""
        return np.stack([im.data for im in self.images]) if self.images else np.zeros((0, 0))

    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = [int(i) for i in indices]
        return Dataset(
            images=tuple(self.images[i] for i in idx),
            labels=tuple(self.labels[i] for i in idx),
            num_classes=self.num_classes,
        )


@dataclass(frozen=True)
class Perturbation:
    """A norm-bounded perturbation budget."""

    norm: str
    epsilon: float

    def __post_init__(self):
        if self.norm not in _NORMS:
            raise ArgumentError(f"norm must be one of {_NORMS}, got {self.norm!r}")
        if not (self.epsilon >= 0.0):
            raise ArgumentError("epsilon must be nonnegative")


# A predictor handle: anything that maps a list of images to integer labels.
Predictor = Callable[[Sequence[Image]], np.ndarray]


def _check_pairs(originals: Sequence[Image], perturbed: Sequence[Image]) -> None:
    if len(originals) == 0 or len(originals) != len(perturbed):
        raise ArgumentError("need equal-length nonempty image lists")
    shape = originals[0].shape
    for a, b in zip(originals, perturbed):
        if a.shape != shape or b.shape != shape:
            raise ArgumentError("all images must share one shape")


def normalized_l2_dissimilarity(
    originals: Sequence[Image], perturbed: Sequence[Image]
) -> float:
    """Mean over the batch of ||x - x'||_2 / ||x||_2.

    Zero exactly when every pair is identical. Originals with zero norm are
    rejected because the ratio is undefined for them.
    """
    _check_pairs(originals, perturbed)
    total = 0.0
    for x, xp in zip(originals, perturbed):
        nx = float(np.linalg.norm(x.data))
        if nx == 0.0:
            raise DegenerateInputError("original image has zero l2 norm")
        total += float(np.linalg.norm(x.data - xp.data)) / nx
    return total / len(originals)


def success_rate(
    model: Predictor, originals: Sequence[Image], perturbed: Sequence[Image]
) -> float:
    """Fraction of samples whose predicted label was altered by the attack."""
    _check_pairs(originals, perturbed)
    before = np.asarray(model(list(originals)), dtype=np.int64)
    after = np.asarray(model(list(perturbed)), dtype=np.int64)
    return float(np.mean(before != after))


def error_rate_on_valid(
    model: Predictor,
    benign: Dataset,
    adversarial: Sequence[Image],
    *,
    reference: Predictor,
) -> float:
    """Error rate of ``model`` on adversarial images, restricted to samples the
    reference (undefended) model classifies correctly in benign form.

    The reference model is explicit context so one adversarial set can be
    scored against many defenses.
    """
    if len(adversarial) != len(benign):
        raise ArgumentError("adversarial list must align index-wise with benign")
    truth = benign.label_array()
    ref_pred = np.asarray(reference(list(benign.images)), dtype=np.int64)
    valid = ref_pred == truth
    if not np.any(valid):
        raise DegenerateInputError("reference model classifies no benign sample correctly")
    idx = np.flatnonzero(valid)
    preds = np.asarray(model([adversarial[i] for i in idx]), dtype=np.int64)
    return float(np.mean(preds != truth[idx]))


def project_to_ball(x: Image, center: Image, pert: Perturbation) -> Image:
    """Project ``x`` onto the perturbation ball around ``center``, then clamp
    into [0, 1].

    linf: element-wise clamp into [center - eps, center + eps].
    l2:   if ||x - center||_2 > eps, rescale the offset radially to length eps.
    The radial rescale happens before the [0, 1] clamp; the two do not commute.
    """
    if not x.same_shape(center):
        raise ArgumentError("x and center must share a shape")
    if pert.norm == LINF:
        out = np.clip(x.data, center.data - pert.epsilon, center.data + pert.epsilon)
    elif pert.norm == L2:
        delta = x.data - center.data
        norm = float(np.linalg.norm(delta))
        # the relative slack absorbs rescale rounding, keeping projection
        # exactly idempotent
        if norm > pert.epsilon * (1.0 + 1e-12) and norm > 0.0:
            delta = delta * (pert.epsilon / norm)
        out = center.data + delta
    else:
        raise ArgumentError(f"projection undefined for norm {pert.norm!r}")
    out = np.clip(out, 0.0, 1.0)
    return Image(x.height, x.width, x.channels, out)


def clamp01_image(grid: np.ndarray, like: Image) -> Image:
    """Clamp an array into [0, 1] and wrap it with the shape of ``like``."""
    return Image(like.height, like.width, like.channels, np.clip(grid.ravel(), 0.0, 1.0))


def derive_seed(*parts: int) -> int:
    """Stable per-item seed derived from (global seed, index, ...) context."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(ss.generate_state(1)[0])
