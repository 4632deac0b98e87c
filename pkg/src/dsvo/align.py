"""Inverse-compositional direct image alignment of a new frame against all
keyframes in the window (frame-to-window tracking).

The pose increment is parameterized as a world-frame motion of the hosted
points, so the per-pixel pose Jacobians are pure host-side quantities and are
precomputed at keyframe creation (see Keyframe.refresh_cache). Solving the
normal equations on the host side and compensating on the target side yields
the update ``T_j <- exp(delta) T_j``. Affine brightness parameters are
updated forward-additively alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import AlignConfig
from .frames import FrameStateVars, SlidingWindow
from .parallel import map_ordered, row_chunks

_SIGMA_FLOOR = 1e-6


class TrackingLostError(RuntimeError):
    def __init__(self, result):
        super().__init__("no points tracked")
        self.result = result


def photometric_residual(host_val, host_aff, target_val, target_aff):
    """r = (I_i - b_i) - exp(a_i - a_j) (I_j - b_j)."""
    a_i, b_i = host_aff
    a_j, b_j = target_aff
    return (host_val - b_i) - np.exp(a_i - a_j) * (target_val - b_j)


def gradient_weight(grad, c: float):
    """w_g = c^2 / (c^2 + |grad|^2); penalizes high-gradient pixels."""
    grad = np.asarray(grad, float)
    g2 = np.sum(grad * grad, axis=-1)
    return c * c / (c * c + g2)


def robust_weight(r, sigma: float, nu: float):
    """t-distribution weight (nu + 1) / (nu + (r / sigma)^2)."""
    x = np.asarray(r, float) / sigma
    return (nu + 1.0) / (nu + x * x)


def reject_patch(residuals: np.ndarray, host_grads: np.ndarray):
    """Gradient-based outlier test for one patch.

    A pixel is bad iff r^2 exceeds the squared host-gradient norm; the patch
    is discarded when two or more pixels are bad, otherwise bad pixels are
    excluded individually. Returns (discard, bad_mask).
    """
    residuals = np.asarray(residuals, float)
    g2 = np.sum(np.asarray(host_grads, float) ** 2, axis=-1)
    bad = residuals**2 > g2
    return int(bad.sum()) >= 2, bad


def predict_state(history: list[FrameStateVars]) -> FrameStateVars:
    """Constant-velocity prediction from the most recent tracked states."""
    if not history:
        return FrameStateVars()
    last = history[-1]
    if len(history) < 2:
        return last.copy()
    prev = history[-2]
    step = last.pose.compose(prev.pose.inverse())
    out = last.copy()
    out.pose = step.compose(last.pose)
    out.pose.orthonormalize()
    return out


@dataclass
class TrackResult:
    state: FrameStateVars
    tracked_count: int
    selected_count: int
    cost: float
    iters_per_level: list[int] = field(default_factory=list)
    cost_trace: list[tuple[float, float]] = field(default_factory=list)
    # per-point diagnostics over the concatenated window points (level 0)
    host_ids: np.ndarray | None = None
    host_uv: np.ndarray | None = None
    warp_uv: np.ndarray | None = None
    warp_rho: np.ndarray | None = None
    warp_ok: np.ndarray | None = None
    tracked_mask: np.ndarray | None = None
    discard_uv: np.ndarray | None = None

    @property
    def Q(self) -> float:
        if self.selected_count == 0:
            return 0.0
        return self.tracked_count / self.selected_count


class _WindowData:
    """Concatenated per-level host-side data for the active window points."""

    def __init__(self, window: SlidingWindow, cell_size: int = 16):
        kfs = window.keyframes
        idx = [np.flatnonzero(kf.alive) for kf in kfs]
        self.n = int(sum(len(i) for i in idx))
        P = window.num_levels
        self.q = [
            np.concatenate([kf.world_pts[lv][i] for kf, i in zip(kfs, idx)])
            if self.n else np.zeros((0, 5, 3))
            for lv in range(P)
        ]
        self.jac = [
            np.concatenate([kf.ic_jac[lv][i] for kf, i in zip(kfs, idx)])
            if self.n else np.zeros((0, 5, 6))
            for lv in range(P)
        ]
        self.host_int = [
            np.concatenate([kf.patch_int[i, lv] for kf, i in zip(kfs, idx)])
            if self.n else np.zeros((0, 5))
            for lv in range(P)
        ]
        self.host_g2 = [
            np.concatenate(
                [np.sum(kf.patch_grad[i, lv] ** 2, axis=-1) for kf, i in zip(kfs, idx)]
            )
            if self.n else np.zeros((0, 5))
            for lv in range(P)
        ]
        self.host_aff = (
            np.concatenate(
                [np.tile(kf.state.aff_l, (len(i), 1)) for kf, i in zip(kfs, idx)]
            )
            if self.n else np.zeros((0, 2))
        )
        self.host_ids = (
            np.concatenate([np.full(len(i), kf.id) for kf, i in zip(kfs, idx)])
            if self.n else np.zeros(0, int)
        )
        self.host_uv = (
            np.concatenate([kf.uv[i] for kf, i in zip(kfs, idx)])
            if self.n else np.zeros((0, 2))
        )
        self.host_rho = (
            np.concatenate([kf.rho[i] for kf, i in zip(kfs, idx)])
            if self.n else np.zeros(0)
        )
        # row-of-cells task boundaries: cuts where host keyframe or cell row change
        if self.n:
            kf_no = np.concatenate(
                [np.full(len(i), k) for k, i in enumerate(idx)]
            )
            row = self.host_uv[:, 1] // cell_size
            change = np.flatnonzero(np.diff(kf_no) | (np.diff(row) != 0)) + 1
            self.boundaries = change
        else:
            self.boundaries = np.zeros(0, int)


def _warp_targets(state, data, lv, cam, baseline, use_right, sl=slice(None)):
    """Residual ingredients for the left (and right) target at one level."""
    q = data.q[lv][sl]
    R, t = state.pose.R, state.pose.t
    p = (q - t) @ R  # R^T (q - t)
    out = {}
    for side, shift, aff in (
        ("l", 0.0, state.aff_l),
        ("r", baseline, state.aff_r),
    ):
        if side == "r" and not use_right:
            break
        z = p[..., 2]
        okz = z > 1e-9
        zz = np.where(okz, z, 1.0)
        u = cam.fx * (p[..., 0] - shift) / zz + cam.cx
        v = cam.fy * p[..., 1] / zz + cam.cy
        uv = np.stack([u, v], axis=-1)
        out[side] = (uv, okz, zz)
    return p, out


def _eval_pass(state, data, lv, cam, img_l, img_r, baseline, use_right, sl):
    from .image import interpolate_masked

    _, tgt = _warp_targets(state, data, lv, cam, baseline, use_right, sl)
    res = {}
    aff_map = {"l": state.aff_l, "r": state.aff_r}
    host_int = data.host_int[lv][sl]
    host_aff = data.host_aff[sl]
    for side, img in (("l", img_l), ("r", img_r)):
        if side not in tgt:
            continue
        uv, okz, _ = tgt[side]
        vals, oki = interpolate_masked(img, uv)
        a_j, b_j = aff_map[side]
        e = np.exp(host_aff[:, 0:1] - a_j)
        r = (host_int - host_aff[:, 1:2]) - e * (vals - b_j)
        res[side] = {
            "r": r,
            "valid": okz & oki,
            "vals": vals,
            "e": np.broadcast_to(e, r.shape),
            "b_j": b_j,
        }
    return res


def _merge(parts, key, side):
    return np.concatenate([p[side][key] for p in parts]) if parts else np.zeros((0, 5))


def track_frame(
    window: SlidingWindow,
    frame,
    init: FrameStateVars,
    cfg: AlignConfig,
    n_threads: int = 1,
) -> TrackResult:
    """Track a new frame against every keyframe in the window.

    Keyframe poses stay fixed; the optimized variables are the new frame's
    pose and affine parameters (left, plus right in stereo mode). Gauss-
    Newton runs coarse-to-fine with early stop on plateau.
    """
    if not window.keyframes:
        raise ValueError("cannot track against an empty window")
    cam0 = window.rig.cam
    baseline = window.rig.baseline
    use_right = bool(cfg.stereo and frame.right is not None)
    dim = 10 if use_right else 8

    data = _WindowData(window)
    selected = data.n
    state = init.copy()

    P = window.num_levels
    n_levels = P if cfg.levels is None else min(cfg.levels, P)
    levels = list(range(n_levels - 1, -1, -1))
    chunks = row_chunks(data.n, data.boundaries, max(n_threads * 4, 1))

    iters_per_level = []
    cost_trace = []
    final_cost = 0.0
    sides = ["l", "r"] if use_right else ["l"]

    for lv in levels:
        cam = cam0.scaled(lv)
        img_l = frame.left[lv].intensity
        img_r = frame.right[lv].intensity if use_right else None
        w_g = cfg.c**2 / (cfg.c**2 + data.host_g2[lv])
        n_iter = 0
        stop = False
        while n_iter < cfg.max_iters and not stop:
            parts = map_ordered(
                lambda sl: _eval_pass(
                    state, data, lv, cam, img_l, img_r, baseline, use_right, sl
                ),
                chunks,
                n_threads,
            )
            weights = {}
            all_r = []
            for side in sides:
                r = _merge(parts, "r", side)
                valid = _merge(parts, "valid", side).astype(bool)
                all_r.append(r[valid])
                weights[side] = (r, valid)
            resid = np.concatenate(all_r) if all_r else np.zeros(0)
            if resid.size == 0:
                stop = True
                break
            sigma = max(1.4826 * np.median(np.abs(resid)), _SIGMA_FLOOR)

            H = np.zeros((dim, dim))
            g = np.zeros(dim)
            cost = 0.0
            used = {}
            for si, side in enumerate(sides):
                r, valid = weights[side]
                bad = (r**2 > data.host_g2[lv]) & valid
                discard = bad.sum(axis=1) >= 2
                use = valid & ~bad & ~discard[:, None]
                w = w_g * robust_weight(r, sigma, cfg.nu) * use
                used[side] = (use, w, discard)
                vals = _merge(parts, "vals", side)
                e = _merge(parts, "e", side)
                b_j = parts[0][side]["b_j"] if parts else 0.0
                J = np.zeros((data.n, 5, dim))
                J[..., :6] = data.jac[lv]
                col = 6 + 2 * si
                J[..., col] = e * (vals - b_j)
                J[..., col + 1] = e
                H += np.einsum("mpi,mp,mpj->ij", J, w, J)
                g += np.einsum("mpi,mp,mp->i", J, w, r)
                cost += float(np.sum(w * r * r))

            try:
                delta = -np.linalg.solve(H + 1e-12 * np.trace(H) * np.eye(dim), g)
            except np.linalg.LinAlgError:
                delta = -np.linalg.lstsq(H, g, rcond=None)[0]

            accepted = False
            for _attempt in range(2):
                cand = state.box_plus(delta[:dim])
                cparts = map_ordered(
                    lambda sl: _eval_pass(
                        cand, data, lv, cam, img_l, img_r, baseline, use_right, sl
                    ),
                    chunks,
                    n_threads,
                )
                new_cost = 0.0
                for side in sides:
                    r2 = _merge(cparts, "r", side)
                    v2 = _merge(cparts, "valid", side).astype(bool)
                    _, w, _ = used[side]
                    new_cost += float(np.sum(w * v2 * r2 * r2))
                if new_cost <= cost + 1e-15:
                    state = cand
                    accepted = True
                    cost_trace.append((cost, new_cost))
                    if cost > 0 and (cost - new_cost) / cost < cfg.plateau_tol:
                        stop = True
                    final_cost = new_cost
                    break
                delta = delta * 0.5
            if not accepted:
                stop = True
            n_iter += 1
        iters_per_level.append(n_iter)

    # final bookkeeping at the finest level used
    lv = levels[-1]
    cam = cam0.scaled(lv)
    img_l = frame.left[lv].intensity
    img_r = frame.right[lv].intensity if use_right else None
    parts = map_ordered(
        lambda sl: _eval_pass(state, data, lv, cam, img_l, img_r, baseline, use_right, sl),
        chunks,
        n_threads,
    )
    r = _merge(parts, "r", "l")
    valid = _merge(parts, "valid", "l").astype(bool)
    bad = (r**2 > data.host_g2[lv]) & valid
    discard = (bad.sum(axis=1) >= 2) & (valid.sum(axis=1) > 0)
    tracked = (valid.sum(axis=1) >= 4) & ~discard

    # level-0 warp of the patch centers for downstream consumers
    _, tgt0 = _warp_targets(state, data, 0, cam0, baseline, False)
    uv0, okz0, zz0 = tgt0["l"]
    from .image import interp_mask

    ok0 = okz0[:, 0] & interp_mask(frame.left[0].intensity, uv0[:, 0])
    disc_centers = uv0[discard, 0] if discard.any() else np.zeros((0, 2))

    result = TrackResult(
        state=state,
        tracked_count=int(tracked.sum()),
        selected_count=selected,
        cost=final_cost,
        iters_per_level=iters_per_level,
        cost_trace=cost_trace,
        host_ids=data.host_ids,
        host_uv=data.host_uv,
        warp_uv=uv0[:, 0],
        warp_rho=np.where(okz0[:, 0], 1.0 / zz0[:, 0], 0.0),
        warp_ok=ok0,
        tracked_mask=tracked,
        discard_uv=disc_centers,
    )
    if result.tracked_count == 0:
        raise TrackingLostError(result)
    return result
