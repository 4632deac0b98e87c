"""Grid-based point selection with an adaptive gradient threshold,
occupancy masking, and cross-patch extraction with per-level precomputation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SelectConfig
from .image import FramePyramid, interpolate_masked

# cross-shaped 5-pixel patch offsets (level-local pixels): center, +-x, +-y
PATCH_OFFSETS = np.array(
    [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
)
PATCH_SIZE = len(PATCH_OFFSETS)


@dataclass
class SelectorState:
    """Running gradient threshold, adapted once per processed image."""

    g_min: float

    def copy(self) -> "SelectorState":
        return SelectorState(self.g_min)


def make_occupancy_mask(
    height: int, width: int, projections: np.ndarray, radius: int = 2
) -> np.ndarray:
    """Binary mask marking dilated disks around map-point projections.

    ``projections`` is an (K, 2) array of pixel coordinates; points outside
    the image contribute nothing. Dilation uses Chebyshev distance.
    """
    mask = np.zeros((height, width), dtype=bool)
    pts = np.asarray(projections, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return mask
    inb = (
        (pts[:, 0] >= 0) & (pts[:, 0] <= width - 1)
        & (pts[:, 1] >= 0) & (pts[:, 1] <= height - 1)
    )
    pts = np.rint(pts[inb]).astype(int)
    for du in range(-radius, radius + 1):
        u = np.clip(pts[:, 0] + du, 0, width - 1)
        for dv in range(-radius, radius + 1):
            v = np.clip(pts[:, 1] + dv, 0, height - 1)
            mask[v, u] = True
    return mask


def _cell_maxima(g2: np.ndarray, mask: np.ndarray, cell: int):
    """Per-cell (value, u, v) of the unmasked pixel with maximal g2."""
    h, w = g2.shape
    rows, cols = h // cell, w // cell
    g = np.where(mask[: rows * cell, : cols * cell], -np.inf, g2[: rows * cell, : cols * cell])
    blocks = g.reshape(rows, cell, cols, cell).transpose(0, 2, 1, 3).reshape(rows, cols, -1)
    idx = np.argmax(blocks, axis=2)
    val = np.take_along_axis(blocks, idx[..., None], axis=2)[..., 0]
    dv, du = np.divmod(idx, cell)
    vv = dv + np.arange(rows)[:, None] * cell
    uu = du + np.arange(cols)[None, :] * cell
    return val, uu, vv


def select_points(
    pyr: FramePyramid,
    mask: np.ndarray,
    state: SelectorState,
    cfg: SelectConfig,
) -> tuple[np.ndarray, SelectorState]:
    """Select at most one high-gradient pixel per cell.

    Candidates must exceed the running threshold ``g_min`` (squared-gradient
    units); if too few pass, a second round with ``g_min / 2`` is run on the
    same image. The threshold is then stepped by ``delta_g`` for the next
    image: down if still too few, up if too many.

    Returns (points (n, 2) int-valued pixel coordinates sorted by cell
    row/column, updated selector state).
    """
    lvl = pyr[0]
    g2 = lvl.gx**2 + lvl.gy**2
    h, w = g2.shape
    cell = cfg.cell_size
    rows, cols = h // cell, w // cell
    n_cells = rows * cols
    min_pts = cfg.min_points if cfg.min_points is not None else n_cells // 2
    max_pts = cfg.max_points if cfg.max_points is not None else n_cells

    val, uu, vv = _cell_maxima(g2, mask, cell)
    usable = np.isfinite(val) & (val > 0)

    accept = usable & (val >= state.g_min)
    if int(accept.sum()) < min_pts:
        accept = usable & (val >= state.g_min / 2.0)

    count = int(accept.sum())
    g_min = state.g_min
    if count < min_pts:
        g_min = max(0.0, g_min - cfg.delta_g)
    elif count > max_pts:
        g_min = g_min + cfg.delta_g

    pts = np.stack([uu[accept], vv[accept]], axis=-1).astype(float)
    # accept traverses cells in (row, col) order already
    return pts, SelectorState(g_min)


@dataclass(frozen=True)
class PatchBatch:
    """Per-level cross-patch data for a batch of points.

    intensities: (n, P, 5); gradients: (n, P, 5, 2); valid: (n,).
    Stored values equal bilinear interpolation of the pyramid at the
    level-scaled coordinates ``uv / 2**level + offset``.
    """

    uv: np.ndarray
    intensities: np.ndarray
    gradients: np.ndarray
    valid: np.ndarray


def extract_patches(pyr: FramePyramid, uv: np.ndarray) -> PatchBatch:
    """Extract cross patches at every pyramid level for points (n, 2).

    A point whose patch leaves the interpolable domain at any level is
    marked invalid.
    """
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    n = len(uv)
    P = len(pyr)
    intensities = np.zeros((n, P, PATCH_SIZE))
    gradients = np.zeros((n, P, PATCH_SIZE, 2))
    valid = np.ones(n, dtype=bool)
    for lv in range(P):
        lvl = pyr[lv]
        coords = uv[:, None, :] / 2.0**lv + PATCH_OFFSETS[None, :, :]
        vals, ok = interpolate_masked(lvl.intensity, coords)
        gx, _ = interpolate_masked(lvl.gx, coords)
        gy, _ = interpolate_masked(lvl.gy, coords)
        intensities[:, lv] = vals
        gradients[:, lv, :, 0] = gx
        gradients[:, lv, :, 1] = gy
        valid &= ok.all(axis=1)
    return PatchBatch(uv, intensities, gradients, valid)


@dataclass(frozen=True)
class Patch:
    """Single-point view of a cross patch (5 pixels at every level)."""

    uv: np.ndarray
    intensities: np.ndarray  # (P, 5)
    gradients: np.ndarray  # (P, 5, 2)


def extract_patch(pyr: FramePyramid, uv: np.ndarray) -> Patch | None:
    """Extract one cross patch; returns None if any level is out of bounds."""
    batch = extract_patches(pyr, np.asarray(uv, float).reshape(1, 2))
    if not batch.valid[0]:
        return None
    return Patch(batch.uv[0], batch.intensities[0], batch.gradients[0])
