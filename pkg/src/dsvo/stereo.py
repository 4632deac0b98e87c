"""Coarse-to-fine sparse stereo matching with ZNCC and the three-stage
inverse-depth initialization cascade (depth image, stereo, map points).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import StereoMatchConfig
from .geometry import StereoRig
from .image import FramePyramid, interpolate_masked

# ZNCC patch: 5 rows x 7 cols, wider along the (horizontal) epipolar line
ZNCC_ROWS = 5
ZNCC_COLS = 7
_ZOFF_V, _ZOFF_U = np.meshgrid(
    np.arange(ZNCC_ROWS) - ZNCC_ROWS // 2,
    np.arange(ZNCC_COLS) - ZNCC_COLS // 2,
    indexing="ij",
)
_ZOFF = np.stack([_ZOFF_U.ravel(), _ZOFF_V.ravel()], axis=-1).astype(float)  # (35, 2)


class InitSource(Enum):
    NONE = 0
    DEPTH = 1
    STEREO = 2
    MAP = 3


@dataclass(frozen=True)
class DisparityResult:
    index: int
    disparity: float
    score: float
    matched: bool


def zncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-normalized cross-correlation of two flat patches in [-1, 1].

    Either patch having zero variance yields 0 (declared no-match).
    """
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    a = a - a.mean()
    b = b - b.mean()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _sample_patches(img: np.ndarray, uv: np.ndarray):
    """ZNCC patches at (n, 2) centers; returns (values (n, 35), ok (n,))."""
    coords = uv[:, None, :] + _ZOFF[None, :, :]
    vals, ok = interpolate_masked(img, coords)
    return vals, ok.all(axis=1)


def _zncc_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ZNCC of (n, 35) against (n, 35); zero-variance rows give 0."""
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    good = denom > 1e-12
    out = np.zeros(len(a))
    out[good] = np.einsum("ij,ij->i", a, b)[good] / denom[good]
    return np.clip(out, -1.0, 1.0)


def match_stereo(
    left: FramePyramid,
    right: FramePyramid,
    points: np.ndarray,
    cfg: StereoMatchConfig,
) -> list[DisparityResult]:
    """Sparse rectified-stereo matching, coarse-to-fine.

    The full disparity range is searched only at the coarsest level; finer
    levels refine within ``+-search_radius`` of the doubled estimate, with a
    final 3-point parabola sub-pixel fit on the ZNCC scores.
    """
    points = np.asarray(points, float).reshape(-1, 2)
    n = len(points)
    P = len(left)
    width = left.shape[1]
    max_d = cfg.max_disparity if cfg.max_disparity is not None else width // 4

    disp = np.zeros(n)
    score = np.full(n, -2.0)
    alive = np.ones(n, dtype=bool)
    s_m1 = np.zeros(n)
    s_p1 = np.zeros(n)

    for lv in range(P - 1, -1, -1):
        scale = 2.0**lv
        uv_l = points / scale
        tmpl, ok_t = _sample_patches(left[lv].intensity, uv_l)
        alive &= ok_t
        # zero-variance templates can never match
        tvar = tmpl.std(axis=1)
        alive &= tvar > 1e-9

        if lv == P - 1:
            d_candidates = np.arange(0, int(np.ceil(max_d / scale)) + 1)
            base = np.zeros(n)
        else:
            base = disp * 2.0
            d_candidates = np.arange(-cfg.search_radius, cfg.search_radius + 1)

        best = np.full(n, -2.0)
        best_d = np.zeros(n)
        prev_s = np.full(n, -2.0)  # score at best_d - 1 step
        sm1 = np.zeros(n)
        sp1 = np.zeros(n)
        last_scores = None
        score_hist = {}
        for off in d_candidates:
            d = base + off
            uv_r = np.stack([uv_l[:, 0] - d, uv_l[:, 1]], axis=-1)
            cand, ok_c = _sample_patches(right[lv].intensity, uv_r)
            s = _zncc_batch(tmpl, cand)
            s = np.where(ok_c & (d >= 0), s, -2.0)
            score_hist[int(off)] = s
            upd = alive & (s > best)
            best_d = np.where(upd, d, best_d)
            best = np.where(upd, s, best)

        disp = np.where(alive, best_d, disp)
        score = np.where(alive, best, score)
        alive &= best > -2.0

        if lv == 0:
            # neighbours of the winner for the parabola fit
            offs = sorted(score_hist)
            arr = np.stack([score_hist[o] for o in offs], axis=1)  # (n, K)
            rel = np.rint(best_d - base).astype(int)
            for i in range(n):
                if not alive[i]:
                    continue
                try:
                    j = offs.index(rel[i])
                except ValueError:
                    continue
                if 0 < j < len(offs) - 1:
                    s_m1[i] = arr[i, j - 1]
                    s_p1[i] = arr[i, j + 1]
                else:
                    s_m1[i] = s_p1[i] = -2.0

    results = []
    for i in range(n):
        if not alive[i]:
            results.append(DisparityResult(i, 0.0, 0.0, False))
            continue
        d = float(disp[i])
        s0 = float(score[i])
        sm, sp = float(s_m1[i]), float(s_p1[i])
        if sm > -2.0 and sp > -2.0:
            denom = sm - 2.0 * s0 + sp
            if denom < -1e-12:
                d += float(np.clip(0.5 * (sm - sp) / denom, -0.5, 0.5))
        matched = s0 >= cfg.zncc_min and d >= 0.0
        results.append(DisparityResult(i, max(d, 0.0), s0, matched))
    return results


def disparity_to_inv_depth(d: float, rig: StereoRig) -> float:
    """rho = d / (fx * baseline); d = 0 maps to rho = 0 (uninitialized)."""
    if d < 0:
        raise ValueError("disparity must be non-negative")
    return d / (rig.cam.fx * rig.baseline)


def init_depths(
    points: np.ndarray,
    rig: StereoRig,
    depth_img: np.ndarray | None = None,
    left: FramePyramid | None = None,
    right: FramePyramid | None = None,
    map_cell_rho: dict[tuple[int, int], float] | None = None,
    cell_size: int = 16,
    match_cfg: StereoMatchConfig | None = None,
    depth_max: float = 100.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-depth initialization cascade: depth image, stereo, map points.

    A depth set by an earlier source is never overwritten by a later one.
    Returns (rho (n,), source tags (n,) of InitSource values); uninitialized
    points keep rho = 0 and tag NONE.
    """
    points = np.asarray(points, float).reshape(-1, 2)
    n = len(points)
    rho = np.zeros(n)
    tags = np.full(n, InitSource.NONE, dtype=object)

    if depth_img is not None and n:
        u = np.clip(np.rint(points[:, 0]).astype(int), 0, depth_img.shape[1] - 1)
        v = np.clip(np.rint(points[:, 1]).astype(int), 0, depth_img.shape[0] - 1)
        z = depth_img[v, u]
        good = (z > 0) & (z < depth_max)
        rho[good] = 1.0 / z[good]
        tags[good] = InitSource.DEPTH

    if right is not None and left is not None and n:
        todo = np.flatnonzero(tags == InitSource.NONE)
        if len(todo):
            cfg = match_cfg if match_cfg is not None else StereoMatchConfig()
            results = match_stereo(left, right, points[todo], cfg)
            for r in results:
                if r.matched and r.disparity > 0:
                    i = todo[r.index]
                    rho[i] = disparity_to_inv_depth(r.disparity, rig)
                    tags[i] = InitSource.STEREO

    if map_cell_rho and n:
        todo = np.flatnonzero(tags == InitSource.NONE)
        for i in todo:
            key = (int(points[i, 1] // cell_size), int(points[i, 0] // cell_size))
            r = map_cell_rho.get(key)
            if r is not None and r > 0:
                rho[i] = r
                tags[i] = InitSource.MAP

    return rho, tags
