"""Seedable input transformations, compositions, and adjoints of the linear
kinds (needed to pull gradients back through a transform).

Every transform preserves shape, clamps its output to [0, 1], and is a pure
function of (kind, params, seed, input). Geometry kinds resample with
nearest-neighbor by default so they stay exactly linear; their border policy
is constant-zero fill. Neighborhood filters and morphology delegate to
scipy.ndimage with its reflect border.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.fft import dctn, idctn

from .core import Image
from .errors import ArgumentError, UnsupportedTransformError

ROTATE = "rotate"
FLIP_H = "flip_h"
FLIP_V = "flip_v"
FLIP_BOTH = "flip_both"
SHIFT = "shift"
AFFINE = "affine"
NOISE_GAUSSIAN = "noise_gaussian"
NOISE_SALT_PEPPER = "noise_salt_pepper"
NOISE_SPECKLE = "noise_speckle"
FILTER_GAUSSIAN = "filter_gaussian"
FILTER_MEDIAN = "filter_median"
FILTER_MIN = "filter_min"
FILTER_MAX = "filter_max"
FILTER_SOBEL = "filter_sobel"
MORPH_ERODE = "morph_erode"
MORPH_DILATE = "morph_dilate"
MORPH_OPEN = "morph_open"
MORPH_CLOSE = "morph_close"
QUANTIZE = "quantize"
DENOISE_TV = "denoise_tv"
COMPRESS_DCT = "compress_dct"
DISTORT = "distort"
SWIRL = "swirl"
COMPOSE = "compose"

KINDS = (
    ROTATE, FLIP_H, FLIP_V, FLIP_BOTH, SHIFT, AFFINE,
    NOISE_GAUSSIAN, NOISE_SALT_PEPPER, NOISE_SPECKLE,
    FILTER_GAUSSIAN, FILTER_MEDIAN, FILTER_MIN, FILTER_MAX, FILTER_SOBEL,
    MORPH_ERODE, MORPH_DILATE, MORPH_OPEN, MORPH_CLOSE,
    QUANTIZE, DENOISE_TV, COMPRESS_DCT, DISTORT, SWIRL, COMPOSE,
)

_TV_ITERATIONS = 20
_TV_STEP = 0.15
_QUANTIZE_ITERATIONS = 10

# JPEG luminance quantization table; drives the 8x8 block-DCT compression proxy.
_JPEG_Q = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class Transform:
    """A declarative, seedable description of one input transformation."""

    kind: str
    params: Mapping[str, object] = field(default_factory=dict)
    seed: int = 0
    children: tuple["Transform", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        object.__setattr__(self, "children", tuple(self.children))
        validate_transform(self)

    def param(self, name: str, default=None):
        return self.params.get(name, default)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ArgumentError(message)


def validate_transform(t: Transform) -> None:
    k, p = t.kind, t.params
    if k not in KINDS:
        raise ArgumentError(f"unknown transform kind {k!r}")
    if k == ROTATE:
        _require("angle" in p, "rotate needs an 'angle' (degrees)")
        _require(p.get("resampling", "nearest") in ("nearest", "bilinear"),
                 "resampling must be 'nearest' or 'bilinear'")
    elif k == SHIFT:
        _require("dx" in p and "dy" in p, "shift needs integer 'dx' and 'dy'")
        _require(float(p["dx"]).is_integer() and float(p["dy"]).is_integer(),
                 "shift offsets must be whole pixels")
    elif k == AFFINE:
        _require(float(p.get("scale_x", 1.0)) > 0 and float(p.get("scale_y", 1.0)) > 0,
                 "affine scales must be positive")
    elif k in (NOISE_GAUSSIAN, NOISE_SPECKLE):
        _require(float(p.get("sigma", -1)) >= 0, f"{k} needs sigma >= 0")
    elif k == NOISE_SALT_PEPPER:
        _require(0.0 <= float(p.get("amount", -1)) <= 1.0,
                 "salt-pepper amount must lie in [0, 1]")
    elif k == FILTER_GAUSSIAN:
        _require(float(p.get("sigma", 0)) > 0, "filter_gaussian needs sigma > 0")
    elif k in (FILTER_MEDIAN, FILTER_MIN, FILTER_MAX):
        _require(int(p.get("radius", 0)) >= 1, f"{k} needs kernel radius >= 1")
    elif k in (MORPH_ERODE, MORPH_DILATE, MORPH_OPEN, MORPH_CLOSE):
        _require(int(p.get("size", 3)) >= 2, f"{k} needs structuring size >= 2")
    elif k == QUANTIZE:
        _require(int(p.get("clusters", 0)) >= 2, "quantize needs clusters >= 2")
    elif k == DENOISE_TV:
        _require(float(p.get("weight", 0)) > 0, "denoise_tv needs weight > 0")
    elif k == COMPRESS_DCT:
        _require(1 <= int(p.get("quality", 0)) <= 100,
                 "compress_dct quality must lie in [1, 100]")
    elif k == DISTORT:
        _require(p.get("axis") in ("x", "y"), "distort axis must be 'x' or 'y'")
        _require(float(p.get("amplitude", -1)) >= 0 and float(p.get("period", 0)) > 0,
                 "distort needs amplitude >= 0 and period > 0")
    elif k == SWIRL:
        _require(float(p.get("radius", 0)) > 0, "swirl needs radius > 0")
    elif k == COMPOSE:
        _require(len(t.children) > 0, "compose needs a nonempty child list")


def compose(ts: Sequence[Transform]) -> Transform:
    """Composition; the first list entry is applied first."""
    ts = tuple(ts)
    if not ts:
        raise ArgumentError("compose needs a nonempty transform list")
    return Transform(kind=COMPOSE, children=ts)


# ---------------------------------------------------------------------------
# Geometry index maps. Each returns (src_rows, src_cols, valid) for the
# nearest-neighbor inverse mapping out[r, c] = in[src_r, src_c] (zero fill).
# ---------------------------------------------------------------------------


def _grid_coords(h: int, w: int):
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    return rows, cols


def _finish_map(src_r, src_c, h, w):
    src_ri = np.rint(src_r).astype(np.int64)
    src_ci = np.rint(src_c).astype(np.int64)
    valid = (src_ri >= 0) & (src_ri < h) & (src_ci >= 0) & (src_ci < w)
    return src_ri, src_ci, valid


def _rotate_map(h: int, w: int, angle_deg: float):
    theta = math.radians(angle_deg)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = _grid_coords(h, w)
    dr, dc = rows - cr, cols - cc
    # inverse rotation: source = R(-theta) applied to output offsets
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    src_r = cr + (cos_t * dr + sin_t * dc)
    src_c = cc + (-sin_t * dr + cos_t * dc)
    return _finish_map(src_r, src_c, h, w)


def _affine_map(h: int, w: int, sx: float, sy: float, kx: float, ky: float):
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = _grid_coords(h, w)
    dr, dc = rows - cr, cols - cc
    # forward map scales by (sy, sx) and shears; invert the 2x2 matrix
    a, b = sx, kx   # column' = a*dc + b*dr
    c, d = ky, sy   # row'    = c*dc + d*dr
    det = a * d - b * c
    if abs(det) < 1e-12:
        raise ArgumentError("affine transform is singular")
    src_c = cc + (d * dc - b * dr) / det
    src_r = cr + (-c * dc + a * dr) / det
    return _finish_map(src_r, src_c, h, w)


def _swirl_map(h: int, w: int, strength: float, radius: float):
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = _grid_coords(h, w)
    dr, dc = rows - cr, cols - cc
    r = np.hypot(dr, dc)
    theta = strength * np.exp(-r / radius)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    src_r = cr + cos_t * dr - sin_t * dc
    src_c = cc + sin_t * dr + cos_t * dc
    return _finish_map(src_r, src_c, h, w)


def _distort_map(h: int, w: int, axis: str, amplitude: float, period: float):
    rows, cols = _grid_coords(h, w)
    if axis == "x":
        src_r = rows
        src_c = cols - amplitude * np.sin(2.0 * np.pi * rows / period)
    else:
        src_r = rows - amplitude * np.sin(2.0 * np.pi * cols / period)
        src_c = cols
    return _finish_map(src_r, src_c, h, w)


def _apply_index_map(grid: np.ndarray, src_r, src_c, valid) -> np.ndarray:
    out = np.zeros_like(grid)
    out[valid] = grid[src_r[valid], src_c[valid]]
    return out


def _rotate_bilinear(grid: np.ndarray, angle_deg: float) -> np.ndarray:
    h, w = grid.shape[:2]
    theta = math.radians(angle_deg)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = _grid_coords(h, w)
    dr, dc = rows - cr, cols - cc
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    src_r = cr + (cos_t * dr + sin_t * dc)
    src_c = cc + (-sin_t * dr + cos_t * dc)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr, fc = src_r - r0, src_c - c0
    out = np.zeros_like(grid)
    for dr_i, dc_i, wgt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr, cc_i = r0 + dr_i, c0 + dc_i
        inside = (rr >= 0) & (rr < h) & (cc_i >= 0) & (cc_i < w)
        contrib = np.zeros_like(grid)
        contrib[inside] = grid[rr[inside], cc_i[inside]]
        out += wgt[..., None] * contrib
    return out


def _shift_grid(grid: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(grid)
    h, w = grid.shape[:2]
    rs_out = slice(max(dy, 0), h + min(dy, 0))
    rs_in = slice(max(-dy, 0), h + min(-dy, 0))
    cs_out = slice(max(dx, 0), w + min(dx, 0))
    cs_in = slice(max(-dx, 0), w + min(-dx, 0))
    out[rs_out, cs_out] = grid[rs_in, cs_in]
    return out


def _per_channel(grid: np.ndarray, fn) -> np.ndarray:
    return np.stack([fn(grid[:, :, c]) for c in range(grid.shape[2])], axis=2)


def _quantize_channelwise(grid: np.ndarray, clusters: int) -> np.ndarray:
    flat = grid.ravel()
    # quantile-spaced init keeps the clustering deterministic
    centers = np.quantile(flat, (np.arange(clusters) + 0.5) / clusters)
    for _ in range(_QUANTIZE_ITERATIONS):
        assign = np.argmin(np.abs(flat[:, None] - centers[None, :]), axis=1)
        for k in range(clusters):
            members = flat[assign == k]
            if members.size:
                centers[k] = members.mean()
    assign = np.argmin(np.abs(flat[:, None] - centers[None, :]), axis=1)
    return centers[assign].reshape(grid.shape)


def _denoise_tv(channel: np.ndarray, weight: float) -> np.ndarray:
    u = channel.copy()
    eps = 1e-8
    for _ in range(_TV_ITERATIONS):
        dx = np.diff(u, axis=1, append=u[:, -1:])
        dy = np.diff(u, axis=0, append=u[-1:, :])
        mag = np.sqrt(dx * dx + dy * dy + eps)
        px, py = dx / mag, dy / mag
        div = (px - np.roll(px, 1, axis=1)) + (py - np.roll(py, 1, axis=0))
        u -= _TV_STEP * ((u - channel) - weight * div)
    return u


def _compress_dct(channel: np.ndarray, quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    qtable = np.clip(np.floor((_JPEG_Q * scale + 50.0) / 100.0), 1.0, None)
    h, w = channel.shape
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(channel * 255.0 - 128.0, ((0, ph), (0, pw)), mode="edge")
    out = np.empty_like(padded)
    for r in range(0, padded.shape[0], 8):
        for c in range(0, padded.shape[1], 8):
            block = dctn(padded[r:r + 8, c:c + 8], norm="ortho")
            block = np.round(block / qtable) * qtable
            out[r:r + 8, c:c + 8] = idctn(block, norm="ortho")
    return (out[:h, :w] + 128.0) / 255.0


def _apply_grid(t: Transform, grid: np.ndarray, clamp: bool) -> np.ndarray:
    h, w = grid.shape[:2]
    k, p = t.kind, t.params
    if k == ROTATE:
        if p.get("resampling", "nearest") == "bilinear":
            out = _rotate_bilinear(grid, float(p["angle"]))
        else:
            out = _apply_index_map(grid, *_rotate_map(h, w, float(p["angle"])))
    elif k == FLIP_H:
        out = grid[:, ::-1, :].copy()
    elif k == FLIP_V:
        out = grid[::-1, :, :].copy()
    elif k == FLIP_BOTH:
        out = grid[::-1, ::-1, :].copy()
    elif k == SHIFT:
        out = _shift_grid(grid, int(p["dx"]), int(p["dy"]))
    elif k == AFFINE:
        out = _apply_index_map(grid, *_affine_map(
            h, w, float(p.get("scale_x", 1.0)), float(p.get("scale_y", 1.0)),
            float(p.get("shear_x", 0.0)), float(p.get("shear_y", 0.0))))
    elif k == NOISE_GAUSSIAN:
        rng = np.random.default_rng(t.seed)
        out = grid + rng.normal(0.0, float(p["sigma"]), size=grid.shape)
    elif k == NOISE_SALT_PEPPER:
        rng = np.random.default_rng(t.seed)
        out = grid.copy()
        hit = rng.random(grid.shape) < float(p["amount"])
        salt = rng.random(grid.shape) < 0.5
        out[hit & salt] = 1.0
        out[hit & ~salt] = 0.0
    elif k == NOISE_SPECKLE:
        rng = np.random.default_rng(t.seed)
        out = grid * (1.0 + rng.normal(0.0, float(p["sigma"]), size=grid.shape))
    elif k == FILTER_GAUSSIAN:
        out = _per_channel(grid, lambda ch: ndimage.gaussian_filter(ch, float(p["sigma"])))
    elif k == FILTER_MEDIAN:
        size = 2 * int(p["radius"]) + 1
        out = _per_channel(grid, lambda ch: ndimage.median_filter(ch, size=size))
    elif k == FILTER_MIN:
        size = 2 * int(p["radius"]) + 1
        out = _per_channel(grid, lambda ch: ndimage.minimum_filter(ch, size=size))
    elif k == FILTER_MAX:
        size = 2 * int(p["radius"]) + 1
        out = _per_channel(grid, lambda ch: ndimage.maximum_filter(ch, size=size))
    elif k == FILTER_SOBEL:
        def sobel_mag(ch):
            return np.hypot(ndimage.sobel(ch, axis=0), ndimage.sobel(ch, axis=1))
        out = _per_channel(grid, sobel_mag)
    elif k in (MORPH_ERODE, MORPH_DILATE, MORPH_OPEN, MORPH_CLOSE):
        size = (int(p.get("size", 3)),) * 2
        fn = {
            MORPH_ERODE: ndimage.grey_erosion,
            MORPH_DILATE: ndimage.grey_dilation,
            MORPH_OPEN: ndimage.grey_opening,
            MORPH_CLOSE: ndimage.grey_closing,
        }[k]
        out = _per_channel(grid, lambda ch: fn(ch, size=size))
    elif k == QUANTIZE:
        out = _quantize_channelwise(grid, int(p["clusters"]))
    elif k == DENOISE_TV:
        out = _per_channel(grid, lambda ch: _denoise_tv(ch, float(p["weight"])))
    elif k == COMPRESS_DCT:
        out = _per_channel(grid, lambda ch: _compress_dct(ch, int(p["quality"])))
    elif k == DISTORT:
        out = _apply_index_map(grid, *_distort_map(
            h, w, str(p["axis"]), float(p["amplitude"]), float(p["period"])))
    elif k == SWIRL:
        out = _apply_index_map(grid, *_swirl_map(
            h, w, float(p["strength"]), float(p["radius"])))
    elif k == COMPOSE:
        out = grid
        for child in t.children:
            out = _apply_grid(child, out, clamp=clamp)
        return out
    else:  # pragma: no cover - guarded by validate_transform
        raise ArgumentError(f"unknown transform kind {k!r}")
    return np.clip(out, 0.0, 1.0) if clamp else out


def apply(t: Transform, x: Image) -> Image:
    """Apply a transform; output has the input's shape with values in [0, 1]."""
    out = _apply_grid(t, x.grid(), clamp=True)
    return Image(x.height, x.width, x.channels, out.ravel())


def apply_array(t: Transform, grid: np.ndarray) -> np.ndarray:
    """Transform a raw (H, W, C) intensity grid; output is clamped to [0, 1].

    Bypasses Image construction for hot batch paths (oracles, attacks).
    """
    return _apply_grid(t, np.asarray(grid, dtype=np.float64), clamp=True)


def apply_batch(t: Transform, images: Sequence[Image]) -> list[Image]:
    return [apply(t, x) for x in images]


# ---------------------------------------------------------------------------
# Linearity and adjoints. A kind is adjoint-able when its Jacobian is a fixed
# (partial) permutation / identity: nearest-neighbor rotation, shift, flips,
# additive Gaussian noise, and compositions of those.
# ---------------------------------------------------------------------------

_LINEAR_KINDS = (ROTATE, SHIFT, FLIP_H, FLIP_V, FLIP_BOTH, NOISE_GAUSSIAN)


def is_adjointable(t: Transform) -> bool:
    if t.kind == COMPOSE:
        return all(is_adjointable(c) for c in t.children)
    if t.kind == ROTATE:
        return t.params.get("resampling", "nearest") == "nearest"
    return t.kind in _LINEAR_KINDS


def apply_linear(t: Transform, arr: np.ndarray) -> np.ndarray:
    """Apply only the Jacobian of an adjoint-able transform (no clamp, no
    additive offset). ``arr`` is an (H, W, C) array with arbitrary values.
    """
    if not is_adjointable(t):
        raise UnsupportedTransformError(f"{t.kind} has no tractable linear form")
    k = t.kind
    if k == COMPOSE:
        out = arr
        for child in t.children:
            out = apply_linear(child, out)
        return out
    if k == NOISE_GAUSSIAN:
        return arr.copy()
    if k == ROTATE:
        h, w = arr.shape[:2]
        return _apply_index_map(arr, *_rotate_map(h, w, float(t.params["angle"])))
    if k == SHIFT:
        return _shift_grid(arr, int(t.params["dx"]), int(t.params["dy"]))
    if k == FLIP_H:
        return arr[:, ::-1, :].copy()
    if k == FLIP_V:
        return arr[::-1, :, :].copy()
    return arr[::-1, ::-1, :].copy()  # FLIP_BOTH


def adjoint_apply(t: Transform, g: np.ndarray) -> np.ndarray:
    """Apply the transpose of the transform's Jacobian to a gradient array.

    Satisfies <apply_linear(t, x), g> == <x, adjoint_apply(t, g)> for every
    x and g of matching shape.
    """
    if not is_adjointable(t):
        raise UnsupportedTransformError(
            f"adjoint undefined for transform kind {t.kind!r}"
        )
    g = np.asarray(g, dtype=np.float64)
    k = t.kind
    if k == COMPOSE:
        out = g
        for child in reversed(t.children):
            out = adjoint_apply(child, out)
        return out
    if k == NOISE_GAUSSIAN:
        return g.copy()
    if k == ROTATE:
        h, w = g.shape[:2]
        src_r, src_c, valid = _rotate_map(h, w, float(t.params["angle"]))
        out = np.zeros_like(g)
        np.add.at(out, (src_r[valid], src_c[valid]), g[valid])
        return out
    if k == SHIFT:
        return _shift_grid(g, -int(t.params["dx"]), -int(t.params["dy"]))
    if k == FLIP_H:
        return g[:, ::-1, :].copy()
    if k == FLIP_V:
        return g[::-1, :, :].copy()
    return g[::-1, ::-1, :].copy()  # FLIP_BOTH


# ---------------------------------------------------------------------------
# Transform distributions (for expectation-over-transformation attacks).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistComponent:
    """One template in a transform distribution: a kind plus uniform ranges."""

    kind: str
    ranges: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        ranges = {}
        for name, (lo, hi) in dict(self.ranges).items():
            lo, hi = float(lo), float(hi)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ArgumentError(f"range for {name!r} must be finite with lo <= hi")
            ranges[name] = (lo, hi)
        if not ranges:
            raise ArgumentError("distribution component needs at least one range")
        object.__setattr__(self, "ranges", MappingProxyType(ranges))


@dataclass(frozen=True)
class TransformDistribution:
    components: tuple[DistComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ArgumentError("distribution needs at least one component")
        object.__setattr__(self, "components", tuple(self.components))


def sample(dist: TransformDistribution, rng: np.random.Generator) -> Transform:
    """Draw one transform with parameters uniform over the declared ranges."""
    comp = dist.components[int(rng.integers(len(dist.components)))]
    params = {}
    for name in sorted(comp.ranges):
        lo, hi = comp.ranges[name]
        value = float(rng.uniform(lo, hi))
        if comp.kind == SHIFT and name in ("dx", "dy"):
            value = int(np.rint(value))
        params[name] = value
    seed = int(rng.integers(2**31 - 1))
    return Transform(kind=comp.kind, params=params, seed=seed)


def standard_eot_distribution(image_shape: tuple[int, int, int],
                              max_angle: float = 20.0,
                              max_offset_fraction: float = 0.25,
                              noise_sigma: float = 0.05) -> TransformDistribution:
    """Rotations, translations, and additive Gaussian noise; every component
    is adjoint-able so attack gradients can be pulled back exactly.
    """
    h, w, _ = image_shape
    return TransformDistribution(components=(
        DistComponent(ROTATE, {"angle": (-max_angle, max_angle)}),
        DistComponent(SHIFT, {
            "dx": (-max_offset_fraction * (w - 1), max_offset_fraction * (w - 1)),
            "dy": (-max_offset_fraction * (h - 1), max_offset_fraction * (h - 1)),
        }),
        DistComponent(NOISE_GAUSSIAN, {"sigma": (0.0, noise_sigma)}),
    ))


def identity_point_mass() -> TransformDistribution:
    """Degenerate distribution that always yields the identity rotation."""
    return TransformDistribution(
        components=(DistComponent(ROTATE, {"angle": (0.0, 0.0)}),)
    )


# ---------------------------------------------------------------------------
# The curated library behind the desk-scale weak-defense ensemble.
# ---------------------------------------------------------------------------


def standard_library(dataset_tag: str) -> list[Transform]:
    """Fixed, versioned transform roster for a dataset family.

    The "mnist" roster holds 24 entries covering twelve transformation
    categories (rotation, flip, shift, affine, noise, filter, morphology,
    quantization, denoise, compression, distortion, geometric warp).
    """
    if dataset_tag != "mnist":
        raise ArgumentError(f"unknown dataset tag {dataset_tag!r}")
    return [
        Transform(ROTATE, {"angle": 90.0}),
        Transform(ROTATE, {"angle": 180.0}),
        Transform(ROTATE, {"angle": 270.0}),
        Transform(FLIP_H),
        Transform(FLIP_V),
        Transform(FLIP_BOTH),
        Transform(SHIFT, {"dx": -3, "dy": 0}),
        Transform(SHIFT, {"dx": 0, "dy": 3}),
        Transform(AFFINE, {"scale_x": 0.75, "scale_y": 1.0}),
        Transform(NOISE_GAUSSIAN, {"sigma": 0.06}, seed=101),
        Transform(NOISE_SALT_PEPPER, {"amount": 0.05}, seed=102),
        Transform(NOISE_SPECKLE, {"sigma": 0.2}, seed=103),
        Transform(FILTER_GAUSSIAN, {"sigma": 0.8}),
        Transform(FILTER_MEDIAN, {"radius": 1}),
        Transform(FILTER_MIN, {"radius": 1}),
        Transform(FILTER_MAX, {"radius": 1}),
        Transform(FILTER_SOBEL),
        Transform(MORPH_ERODE, {"size": 3}),
        Transform(MORPH_DILATE, {"size": 3}),
        Transform(QUANTIZE, {"clusters": 4}, seed=104),
        Transform(DENOISE_TV, {"weight": 0.1}),
        Transform(COMPRESS_DCT, {"quality": 80}),
        Transform(DISTORT, {"axis": "x", "amplitude": 1.5, "period": 10.0}),
        Transform(SWIRL, {"strength": 1.5, "radius": 14.0}),
    ]


def transform_label(t: Transform) -> str:
    """Stable readable slug for a transform (used as weak-defense ids)."""
    def fmt(v):
        if isinstance(v, float) and v.is_integer():
            return str(int(v))
        return str(v)

    if t.kind == COMPOSE:
        return "compose(" + "+".join(transform_label(c) for c in t.children) + ")"
    parts = [fmt(t.params[k]) for k in sorted(t.params) if k != "resampling"]
    return "_".join([t.kind] + parts) if parts else t.kind


# ---------------------------------------------------------------------------
# JSON serialization so a library roster is reproducible and diffable.
# ---------------------------------------------------------------------------


def transform_to_dict(t: Transform) -> dict:
    d = {"kind": t.kind, "params": dict(t.params), "seed": t.seed}
    if t.kind == COMPOSE:
        d["children"] = [transform_to_dict(c) for c in t.children]
    return d


def transform_from_dict(d: Mapping) -> Transform:
    children = tuple(transform_from_dict(c) for c in d.get("children", ()))
    return Transform(kind=d["kind"], params=d.get("params", {}),
                     seed=int(d.get("seed", 0)), children=children)


def serialize_library(ts: Iterable[Transform]) -> str:
    return json.dumps([transform_to_dict(t) for t in ts], indent=2, sort_keys=True)


def deserialize_library(text: str) -> list[Transform]:
    return [transform_from_dict(d) for d in json.loads(text)]
