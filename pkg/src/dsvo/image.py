"""Image pyramids, sub-pixel interpolation and gradients.

Images are plain 2-D float64 numpy arrays (row-major, nominal 0..255 range).
Pyramids are immutable after construction; the downsample filter is a 2x2 box
average and gradients are central differences (one-sided at borders),
precomputed once per level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PyramidConfigError(ValueError):
    """Image too small for the requested number of pyramid levels."""


@dataclass(frozen=True)
class PyramidLevel:
    intensity: np.ndarray
    gx: np.ndarray
    gy: np.ndarray

    @property
    def shape(self):
        return self.intensity.shape


@dataclass(frozen=True)
class FramePyramid:
    levels: tuple[PyramidLevel, ...]

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i: int) -> PyramidLevel:
        return self.levels[i]

    @property
    def shape(self):
        return self.levels[0].shape


def compute_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients, one-sided at the borders."""
    gy, gx = np.gradient(img)
    return gx, gy


def downsample(img: np.ndarray) -> np.ndarray:
    """2x2 box average; odd dimensions are edge-padded so out = ceil(in / 2)."""
    h, w = img.shape
    if h % 2 or w % 2:
        img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
        h, w = img.shape
    return 0.25 * (
        img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2]
    )


def build_pyramid(img: np.ndarray, num_levels: int) -> FramePyramid:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    if num_levels < 1:
        raise PyramidConfigError("need at least one pyramid level")
    min_dim = 2 ** (num_levels - 1)
    if img.shape[0] < min_dim or img.shape[1] < min_dim:
        raise PyramidConfigError(
            f"image {img.shape} too small for {num_levels} pyramid levels"
        )
    levels = []
    cur = img
    for _ in range(num_levels):
        gx, gy = compute_gradients(cur)
        levels.append(PyramidLevel(cur, gx, gy))
        cur = downsample(cur)
    return FramePyramid(tuple(levels))


@dataclass
class StereoFrame:
    """One (possibly stereo) input frame with prebuilt pyramids."""

    timestamp: float
    left: FramePyramid
    right: FramePyramid | None = None
    depth: np.ndarray | None = None  # meters, 0 = invalid
    raw_left: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.right is not None and self.right.shape != self.left.shape:
            raise ValueError("left/right pyramid dimensions differ")


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------


def interp_mask(img: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """True where uv is inside the bilinear-interpolable domain.

    The last row/column are excluded (no extrapolation).
    """
    uv = np.asarray(uv, dtype=float)
    h, w = img.shape
    u, v = uv[..., 0], uv[..., 1]
    return (u >= 0) & (u < w - 1) & (v >= 0) & (v < h - 1)


def interpolate_masked(img: np.ndarray, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear interpolation; returns (values, in_bounds_mask).

    Out-of-bounds samples get value 0 and mask False.
    """
    uv = np.asarray(uv, dtype=float)
    ok = interp_mask(img, uv)
    u = np.where(ok, uv[..., 0], 0.0)
    v = np.where(ok, uv[..., 1], 0.0)
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    du = u - u0
    dv = v - v0
    i00 = img[v0, u0]
    i01 = img[v0, u0 + 1]
    i10 = img[v0 + 1, u0]
    i11 = img[v0 + 1, u0 + 1]
    top = i00 * (1 - du) + i01 * du
    bot = i10 * (1 - du) + i11 * du
    return np.where(ok, top * (1 - dv) + bot * dv, 0.0), ok


def interpolate(img: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear interpolation; raises on out-of-view samples."""
    val, ok = interpolate_masked(img, uv)
    if not np.all(ok):
        raise OutOfViewError("interpolation outside the valid image domain")
    return val


class OutOfViewError(ValueError):
    pass


def gradient_at(level: PyramidLevel, uv: np.ndarray) -> np.ndarray:
    """Bilinearly interpolated (gx, gy) at sub-pixel locations (..., 2)."""
    gx = interpolate(level.gx, uv)
    gy = interpolate(level.gy, uv)
    return np.stack([gx, gy], axis=-1)


def gradient_at_masked(level: PyramidLevel, uv: np.ndarray):
    gx, ok = interpolate_masked(level.gx, uv)
    gy, _ = interpolate_masked(level.gy, uv)
    return np.stack([gx, gy], axis=-1), ok
