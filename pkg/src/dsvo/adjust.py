"""Stereo photometric bundle adjustment over the sliding window:
block-sparse normal equations, Schur-complement solver, and keyframe
marginalization with first-estimate fixing.

State ordering: frame variables first (pose 6, left affine 2, right affine 2
in stereo mode, per keyframe in window order), then inverse depths grouped by
host keyframe. Frames that carry prior information are linearized at their
stored first estimates; residuals are always evaluated at the current state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PbaConfig
from .frames import FrameStateVars, Keyframe, SlidingWindow
from .geometry import Pose, projection_jacobian
from .image import interpolate_masked
from .parallel import map_ordered
from .select import PATCH_OFFSETS

_SIGMA_FLOOR = 1e-6


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class ConsistencyError(RuntimeError):
    pass


def frame_dim(stereo: bool) -> int:
    return 10 if stereo else 8


def enumerate_passes(n_frames: int, stereo: bool) -> list[tuple[int, int, str]]:
    """Directed projection passes (host, target frame, target side).

    Mono: every host into every other left image, N(N-1) passes. Stereo adds
    the host's own right image and every other right image: each keyframe
    projects into 1 + 2(N-1) target images.
    """
    passes = []
    for i in range(n_frames):
        if stereo:
            passes.append((i, i, "r"))
        for j in range(n_frames):
            if j == i:
                continue
            passes.append((i, j, "l"))
            if stereo:
                passes.append((i, j, "r"))
    return passes


@dataclass
class LinearSystem:
    """Gauss-Newton normal equations H dx = b in block form."""

    H_pp: np.ndarray  # (F, F) dense frame block
    H_pm: np.ndarray  # (F, M) frame-point block
    H_mm: np.ndarray  # (M,) point diagonal
    b_p: np.ndarray  # (F,)
    b_m: np.ndarray  # (M,)
    cost: float = 0.0
    sigma: float = 1.0
    n_res_per_point: np.ndarray | None = None

    @property
    def num_frames_vars(self) -> int:
        return len(self.b_p)

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Assembled full (H, b) — oracle/debug path."""
        F, M = len(self.b_p), len(self.b_m)
        H = np.zeros((F + M, F + M))
        H[:F, :F] = self.H_pp
        H[:F, F:] = self.H_pm
        H[F:, :F] = self.H_pm.T
        H[F:, F:] = np.diag(self.H_mm)
        return H, np.concatenate([self.b_p, self.b_m])


def apply_gauge(sys: LinearSystem, fixed_frame_vars, fixed_points=()):
    """Hold variables fixed by zeroing their rows/columns (identity diag)."""
    for i in fixed_frame_vars:
        sys.H_pp[i, :] = 0.0
        sys.H_pp[:, i] = 0.0
        sys.H_pp[i, i] = 1.0
        sys.H_pm[i, :] = 0.0
        sys.b_p[i] = 0.0
    for m in fixed_points:
        sys.H_pm[:, m] = 0.0
        sys.H_mm[m] = 1.0
        sys.b_m[m] = 0.0


def schur_solve(sys: LinearSystem, lam: float = 0.0):
    """Eliminate the inverse depths via the Schur complement and solve.

    Returns (delta_frames, delta_points). Points without any residual
    support get an implicit infinite prior (their update is zero). A
    singular reduced frame system raises RankDeficiencyError carrying the
    offending null direction.
    """
    Hpp = sys.H_pp + lam * np.diag(np.diag(sys.H_pp))
    Hmm = sys.H_mm * (1.0 + lam)
    dead = Hmm <= 1e-300
    Hmm_inv = np.where(dead, 0.0, 1.0 / np.where(dead, 1.0, Hmm))
    Hpm = sys.H_pm
    Hs = Hpp - (Hpm * Hmm_inv) @ Hpm.T
    bs = sys.b_p - Hpm @ (Hmm_inv * sys.b_m)
    Hs = (Hs + Hs.T) / 2.0
    try:
        L = np.linalg.cholesky(Hs)
        dxp = np.linalg.solve(L.T, np.linalg.solve(L, bs))
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(Hs)
        raise RankDeficiencyError(
            f"reduced frame system singular (min eig {w[0]:.3e})",
            null_direction=V[:, 0],
        )
    dxm = Hmm_inv * (sys.b_m - Hpm.T @ dxp)
    return dxp, dxm


def schur_eliminate(H: np.ndarray, b: np.ndarray, drop: np.ndarray):
    """Eliminate the indexed variables from quadratic (H, b) exactly.

    Returns (H', b') over the kept variables. Uses a pseudo-inverse when the
    dropped block is singular.
    """
    n = len(b)
    drop = np.asarray(drop, int)
    keep = np.setdiff1d(np.arange(n), drop)
    Hkk = H[np.ix_(keep, keep)]
    Hkd = H[np.ix_(keep, drop)]
    Hdd = H[np.ix_(drop, drop)]
    try:
        sol_H = np.linalg.solve(Hdd, Hkd.T)
        sol_b = np.linalg.solve(Hdd, b[drop])
    except np.linalg.LinAlgError:
        Hdd_inv = np.linalg.pinv(Hdd, hermitian=True)
        sol_H = Hdd_inv @ Hkd.T
        sol_b = Hdd_inv @ b[drop]
    Hr = Hkk - Hkd @ sol_H
    br = b[keep] - Hkd @ sol_b
    return (Hr + Hr.T) / 2.0, br


# ---------------------------------------------------------------------------
# Marginalization prior
# ---------------------------------------------------------------------------


class MargPrior:
    """Quadratic prior on frame variables of the listed keyframes.

    The quadratic is expressed in delta coordinates relative to each frame's
    first estimate (stored on the keyframe as ``fej_state``):
    E(delta) = 0.5 delta^T H delta - b^T delta.
    """

    def __init__(self, ids: list[int], H: np.ndarray, b: np.ndarray, dim: int):
        H = np.asarray(H, float)
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-9 * max(
            1.0, np.max(np.abs(H), initial=0.0)
        ):
            raise ConsistencyError("marginalization prior lost symmetry")
        self.ids = list(ids)
        self.H = (H + H.T) / 2.0
        self.b = np.asarray(b, float).copy()
        self.dim = dim

    def delta_from_fej(self, window: SlidingWindow) -> np.ndarray:
        """Accumulated offset of each prior frame from its first estimate."""
        parts = []
        by_id = {kf.id: kf for kf in window.keyframes}
        for kid in self.ids:
            kf = by_id[kid]
            parts.append(kf.state.box_minus(kf.fej_state, dim=self.dim))
        return np.concatenate(parts) if parts else np.zeros(0)

    def add_to_system(self, sys: LinearSystem, window: SlidingWindow):
        """Add the prior to the normal equations at the current state.

        With the residual evaluated at x_bar [+] delta_acc, the effective
        right-hand side is b - H @ delta_acc.
        """
        if not self.ids:
            return
        D = self.dim
        order = [kf.id for kf in window.keyframes]
        cols = []
        for kid in self.ids:
            j = order.index(kid)
            cols.extend(range(j * D, (j + 1) * D))
        cols = np.asarray(cols, int)
        delta = self.delta_from_fej(window)
        sys.H_pp[np.ix_(cols, cols)] += self.H
        sys.b_p[cols] += self.b - self.H @ delta

    def cost_at(self, window: SlidingWindow) -> float:
        if not self.ids:
            return 0.0
        d = self.delta_from_fej(window)
        return float(0.5 * d @ self.H @ d - self.b @ d)


# ---------------------------------------------------------------------------
# System assembly
# ---------------------------------------------------------------------------


def _target_pose(state: FrameStateVars, side: str, baseline: float) -> Pose:
    if side == "l":
        return state.pose
    return state.pose.compose(Pose(np.eye(3), np.array([baseline, 0.0, 0.0])))


def _host_points(kf: Keyframe, idx: np.ndarray, cam_l, lv: int) -> np.ndarray:
    """Backprojected patch pixels in the host camera frame, (n, 5, 3)."""
    rho = kf.rho[idx][:, None]
    uv_l = kf.uv[idx][:, None, :] / 2.0**lv + PATCH_OFFSETS[None, :, :]
    x = (uv_l[..., 0] - cam_l.cx) / (cam_l.fx * rho)
    y = (uv_l[..., 1] - cam_l.cy) / (cam_l.fy * rho)
    z = np.broadcast_to(1.0 / rho, x.shape)
    return np.stack([x, y, z], axis=-1)


def _cross_d(q: np.ndarray) -> np.ndarray:
    """d(exp(e) q)/de = [-q^ | I] stacked for (..., 3) points."""
    D = np.zeros(q.shape[:-1] + (3, 6))
    qx, qy, qz = q[..., 0], q[..., 1], q[..., 2]
    D[..., 0, 1] = qz
    D[..., 0, 2] = -qy
    D[..., 1, 0] = -qz
    D[..., 1, 2] = qx
    D[..., 2, 0] = qy
    D[..., 2, 1] = -qx
    D[..., :, 3:] = np.eye(3)
    return D


def _pass_data(window: SlidingWindow, p, lv: int, cam0, stereo: bool):
    """Residuals and Jacobian tensors for one directed projection pass."""
    i, j, side = p
    kf_i = window.keyframes[i]
    kf_j = window.keyframes[j]
    idx = np.flatnonzero(kf_i.alive)
    n = len(idx)
    D = frame_dim(stereo)
    cam_l = cam0.scaled(lv)
    baseline = window.rig.baseline
    out = {"pass": p, "idx": idx, "n": n}
    if n == 0:
        return out

    p_host = _host_points(kf_i, idx, cam_l, lv)
    cur_i, cur_j = kf_i.state, kf_j.state
    q_cur = cur_i.pose.act(p_host)
    T_t_cur = _target_pose(cur_j, side, baseline)
    pc = (q_cur - T_t_cur.t) @ T_t_cur.R
    okz = pc[..., 2] > 1e-9
    zz = np.where(okz, pc[..., 2], 1.0)
    uv = np.stack(
        [cam_l.fx * pc[..., 0] / zz + cam_l.cx, cam_l.fy * pc[..., 1] / zz + cam_l.cy],
        axis=-1,
    )
    img = (kf_j.frame.left if side == "l" else kf_j.frame.right)[lv]
    it, oki = interpolate_masked(img.intensity, uv)
    gx, _ = interpolate_masked(img.gx, uv)
    gy, _ = interpolate_masked(img.gy, uv)
    valid = okz & oki

    a_i, b_i = cur_i.aff_l
    a_t, b_t = cur_j.aff_l if side == "l" else cur_j.aff_r
    e = np.exp(a_i - a_t)
    r = (kf_i.patch_int[idx, lv] - b_i) - e * (it - b_t)

    # geometry for Jacobians at the linearization (first-estimate) states
    lin_i, lin_j = kf_i.lin_state(), kf_j.lin_state()
    refresh = (lin_i is not cur_i) or (lin_j is not cur_j)
    if refresh:
        q_lin = lin_i.pose.act(p_host)
        T_t_lin = _target_pose(lin_j, side, baseline)
        p_lin = (q_lin - T_t_lin.t) @ T_t_lin.R
        valid = valid & (p_lin[..., 2] > 1e-9)
        p_lin = np.where(valid[..., None], p_lin, np.array([0.0, 0.0, 1.0]))
    else:
        q_lin, T_t_lin = q_cur, T_t_cur
        p_lin = np.where(valid[..., None], pc, np.array([0.0, 0.0, 1.0]))

    Kp = projection_jacobian(cam_l, p_lin)  # (n,5,2,3)
    grad = np.stack([gx, gy], axis=-1)  # (n,5,2)
    G = -e * np.einsum("npi,npij->npj", grad, Kp)  # (n,5,3): dr/dp'

    Dq = _cross_d(q_lin)  # (n,5,3,6)
    RtT = T_t_lin.R.T
    # dr/ddelta_i = G R_t^T [-q^ | I];  dr/ddelta_j = -dr/ddelta_i
    J_pose_i = np.einsum("npk,kl,nplm->npm", G, RtT, Dq)
    J_rho = np.einsum(
        "npk,npk->np",
        G,
        np.einsum("kl,npl->npk", RtT @ lin_i.pose.R, -p_host / kf_i.rho[idx][:, None, None]),
    )

    A_i = np.zeros((n, 5, D))
    A_t = np.zeros((n, 5, D))
    A_i[..., :6] = J_pose_i
    A_t[..., :6] = -J_pose_i
    # host affine (left image): dr/da_i = -e (I_t - b_t), dr/db_i = -1
    A_i[..., 6] = -e * (it - b_t)
    A_i[..., 7] = -1.0
    col = 6 if side == "l" else 8
    A_t[..., col] = e * (it - b_t)
    A_t[..., col + 1] = e

    out.update(
        r=r, valid=valid, A_i=A_i, A_t=A_t, J_rho=J_rho,
        host_g2=np.sum(kf_i.patch_grad[idx, lv] ** 2, axis=-1),
    )
    return out


def build_pba_system(
    window: SlidingWindow,
    cfg: PbaConfig,
    level: int,
    n_threads: int = 1,
    stereo: bool | None = None,
    c_weight: float = 4.0,
    nu: float = 5.0,
    sigma: float | None = None,
) -> LinearSystem:
    """Assemble the PBA normal equations at one pyramid level.

    ``sigma`` overrides the MAD scale estimate; step acceptance in the
    optimizer must compare costs evaluated at the same scale.

    Every keyframe's points are projected into its own right image and into
    both images of every other keyframe (left-only in mono mode). One task
    per directed pass accumulates a private block Hessian; the merge order is
    fixed, so assembly is deterministic for any thread count.
    """
    if stereo is None:
        stereo = window.stereo
    kfs = window.keyframes
    N = len(kfs)
    D = frame_dim(stereo)
    offsets = np.cumsum([0] + [kf.num_active for kf in kfs])
    M = int(offsets[-1])
    F = N * D
    cam0 = window.rig.cam

    passes = enumerate_passes(N, stereo)
    parts = map_ordered(
        lambda p: _pass_data(window, p, level, cam0, stereo), passes, n_threads
    )

    if sigma is None:
        all_r = np.concatenate(
            [pt["r"][pt["valid"]] for pt in parts if pt["n"]]
        ) if any(pt["n"] for pt in parts) else np.zeros(0)
        sigma = max(1.4826 * np.median(np.abs(all_r)), _SIGMA_FLOOR) if all_r.size else 1.0

    sys = LinearSystem(
        H_pp=np.zeros((F, F)),
        H_pm=np.zeros((F, M)),
        H_mm=np.zeros(M),
        b_p=np.zeros(F),
        b_m=np.zeros(M),
        n_res_per_point=np.zeros(M, dtype=int),
    )
    cost = 0.0
    nu1 = nu + 1.0
    for pt in parts:
        if not pt["n"]:
            continue
        i, j, side = pt["pass"]
        r, valid = pt["r"], pt["valid"]
        bad = (r**2 > pt["host_g2"]) & valid
        discard = bad.sum(axis=1) >= 2
        use = valid & ~bad & ~discard[:, None]
        w_g = c_weight**2 / (c_weight**2 + pt["host_g2"])
        w = w_g * nu1 / (nu + (r / sigma) ** 2) * use
        # the robust energy whose gradient is the w-weighted normal
        # equations; unlike sum(w r^2) it is a fixed objective for frozen
        # sigma, so step acceptance can compare it across reweighting rounds
        cost += float(
            np.sum(w_g * use * nu1 * sigma**2 * np.log1p((r / sigma) ** 2 / nu))
        )
        cols = offsets[i] + np.arange(pt["n"])
        bi, bj = slice(i * D, (i + 1) * D), slice(j * D, (j + 1) * D)
        if i == j:
            A = pt["A_i"] + pt["A_t"]
            sys.H_pp[bi, bi] += np.einsum("npa,np,npb->ab", A, w, A)
            hp = np.einsum("npa,np,np->na", A, w, pt["J_rho"])
            sys.H_pm[bi, offsets[i]:offsets[i + 1]] += hp.T
            sys.b_p[bi] -= np.einsum("npa,np,np->a", A, w, r)
        else:
            A_i, A_t = pt["A_i"], pt["A_t"]
            sys.H_pp[bi, bi] += np.einsum("npa,np,npb->ab", A_i, w, A_i)
            sys.H_pp[bj, bj] += np.einsum("npa,np,npb->ab", A_t, w, A_t)
            Hij = np.einsum("npa,np,npb->ab", A_i, w, A_t)
            sys.H_pp[bi, bj] += Hij
            sys.H_pp[bj, bi] += Hij.T
            sys.H_pm[bi, offsets[i]:offsets[i + 1]] += np.einsum(
                "npa,np,np->na", A_i, w, pt["J_rho"]
            ).T
            sys.H_pm[bj, offsets[i]:offsets[i + 1]] += np.einsum(
                "npa,np,np->na", A_t, w, pt["J_rho"]
            ).T
            sys.b_p[bi] -= np.einsum("npa,np,np->a", A_i, w, r)
            sys.b_p[bj] -= np.einsum("npa,np,np->a", A_t, w, r)
        sys.H_mm[cols] += np.einsum("np,np->n", w * pt["J_rho"], pt["J_rho"])
        sys.b_m[cols] -= np.einsum("np,np->n", w * pt["J_rho"], r)
        sys.n_res_per_point[cols] += use.sum(axis=1)
    sys.cost = cost
    sys.sigma = sigma
    return sys


def pba_cost(window, cfg, level, n_threads=1, stereo=None, c_weight=4.0, nu=5.0):
    """Robust PBA cost at the current window state (no Jacobians kept)."""
    s = build_pba_system(window, cfg, level, n_threads, stereo, c_weight, nu)
    return s.cost, s


# ---------------------------------------------------------------------------
# Optimization driver
# ---------------------------------------------------------------------------


def _gauge_indices(window: SlidingWindow, stereo: bool):
    """Oldest keyframe's pose (plus its affine, which is unobservable up to a
    global shift) is held fixed; mono mode additionally fixes one depth."""
    D = frame_dim(stereo)
    fixed = list(range(0, 6)) + list(range(6, D))
    fix_pts = []
    if not stereo:
        for k, kf in enumerate(window.keyframes):
            act = np.flatnonzero(kf.alive)
            if len(act):
                off = sum(w.num_active for w in window.keyframes[:k])
                fix_pts = [off]
                break
    return fixed, fix_pts


@dataclass
class PbaResult:
    final_cost: float
    iters_per_level: list[int] = field(default_factory=list)
    aborted: bool = False


def _apply_step(window: SlidingWindow, dxp, dxm, stereo: bool):
    D = frame_dim(stereo)
    saved = []
    off = 0
    for k, kf in enumerate(window.keyframes):
        saved.append((kf.state, kf.rho.copy()))
        kf.state = kf.state.box_plus(dxp[k * D : (k + 1) * D])
        act = np.flatnonzero(kf.alive)
        rho = kf.rho.copy()
        rho[act] = rho[act] + dxm[off : off + len(act)]
        kf.rho = rho
        off += len(act)
    return saved


def _restore(window: SlidingWindow, saved):
    for kf, (state, rho) in zip(window.keyframes, saved):
        kf.state = state
        kf.rho = rho


def run_pba(
    window: SlidingWindow,
    cfg: PbaConfig,
    n_threads: int = 1,
    c_weight: float = 4.0,
    nu: float = 5.0,
) -> PbaResult:
    """Levenberg-damped photometric bundle adjustment, coarse-to-fine.

    Step acceptance compares robust costs evaluated at the same residual
    scale. A rejected step re-solves the same normal equations with the
    damping increased tenfold (the photometric residual is nonlinear on the
    pixel scale, so full Gauss-Newton steps can overshoot); rejections do
    not consume iterations. A level aborts at the last good state once the
    damping exceeds ``damping_max``. Points leaving the valid inverse-depth
    interval or losing all residual support are dropped afterwards.
    """
    if len(window.keyframes) < 2:
        return PbaResult(0.0)
    stereo = window.stereo
    P = window.num_levels
    top = cfg.levels if cfg.levels is not None else max(P - 2, 0)
    levels = list(range(min(top, P - 1), -1, -1))
    fixed, fix_pts = _gauge_indices(window, stereo)

    result = PbaResult(0.0)
    last_sys = None
    for lv in levels:
        lam = cfg.damping_init
        n_iter = 0
        while n_iter < cfg.max_iters:
            sys = build_pba_system(window, cfg, lv, n_threads, stereo, c_weight, nu)
            last_sys = sys
            if window.prior is not None:
                window.prior.add_to_system(sys, window)
            apply_gauge(sys, fixed, fix_pts)
            cost = sys.cost + (
                window.prior.cost_at(window) if window.prior is not None else 0.0
            )
            accepted = False
            new_cost = None
            while lam <= cfg.damping_max:
                try:
                    dxp, dxm = schur_solve(sys, lam)
                except RankDeficiencyError:
                    if lam == 0.0:
                        raise
                    lam *= 10.0
                    continue
                if np.linalg.norm(np.concatenate([dxp, dxm])) < 1e-8:
                    accepted = True
                    new_cost = cost
                    break
                saved = _apply_step(window, dxp, dxm, stereo)
                new_cost = build_pba_system(
                    window, cfg, lv, n_threads, stereo, c_weight, nu, sigma=sys.sigma
                ).cost + (
                    window.prior.cost_at(window) if window.prior is not None else 0.0
                )
                if new_cost <= cost + 1e-12:
                    accepted = True
                    lam = max(lam / 3.0, 1e-12)
                    break
                _restore(window, saved)
                lam *= 10.0
            if not accepted:
                # a sub-plateau increase at maximal damping is convergence
                # (mask/weight churn near the optimum), not a failure
                gap = (new_cost - cost) if new_cost is not None else np.inf
                if gap > cfg.plateau_tol * max(abs(cost), 1e-300):
                    result.aborted = True
                break
            n_iter += 1
            result.final_cost = new_cost
            rel_drop = (cost - new_cost) / max(abs(cost), 1e-300)
            if cost <= 0 or rel_drop < cfg.plateau_tol:
                break
        result.iters_per_level.append(n_iter)

    # prune points out of bounds or without residual support
    off = 0
    for kf in window.keyframes:
        act = np.flatnonzero(kf.alive)
        n = len(act)
        if n and last_sys is not None and last_sys.n_res_per_point is not None:
            support = last_sys.n_res_per_point[off : off + n]
            kf.alive[act[support == 0]] = False
        off += n
        bad = (kf.rho <= cfg.rho_min) | (kf.rho >= cfg.rho_max)
        kf.alive &= ~bad
        kf.refresh_cache(window.rig.cam, window.num_levels)
    return result


# ---------------------------------------------------------------------------
# Keyframe marginalization
# ---------------------------------------------------------------------------


def marginalize_keyframe(
    window: SlidingWindow,
    k: int,
    cfg: PbaConfig,
    n_threads: int = 1,
    stereo: bool | None = None,
    c_weight: float = 4.0,
    nu: float = 5.0,
) -> None:
    """Fold keyframe k into the marginalization prior and remove it.

    The marginalization system contains the residuals hosted by keyframe k
    (projections into its own right image and into every other keyframe),
    linearized at first estimates, plus the existing prior. Its inverse
    depths are Schur-eliminated first, then its frame variables; the
    resulting quadratic on the remaining frame variables replaces the prior.
    Residuals of other keyframes' points observed in keyframe k are dropped
    so the prior stays exactly on frame variables.
    """
    if stereo is None:
        stereo = window.stereo
    kfs = window.keyframes
    N = len(kfs)
    D = frame_dim(stereo)
    cam0 = window.rig.cam
    kf_k = kfs[k]

    # first estimates are pinned for every frame the prior will touch
    for kf in kfs:
        kf.set_fej()

    # hosted passes of keyframe k only
    passes = [(k, k, "r")] if stereo else []
    for j in range(N):
        if j == k:
            continue
        passes.append((k, j, "l"))
        if stereo:
            passes.append((k, j, "r"))

    parts = map_ordered(
        lambda p: _pass_data(window, p, 0, cam0, stereo), passes, n_threads
    )
    all_r = np.concatenate(
        [pt["r"][pt["valid"]] for pt in parts if pt["n"]]
    ) if any(pt["n"] for pt in parts) else np.zeros(0)
    sigma = max(1.4826 * np.median(np.abs(all_r)), _SIGMA_FLOOR) if all_r.size else 1.0

    m = kf_k.num_active
    F = N * D
    H = np.zeros((F + m, F + m))
    grad = np.zeros(F + m)
    nu1 = nu + 1.0
    for pt in parts:
        if not pt["n"]:
            continue
        i, j, side = pt["pass"]
        r, valid = pt["r"], pt["valid"]
        bad = (r**2 > pt["host_g2"]) & valid
        discard = bad.sum(axis=1) >= 2
        use = valid & ~bad & ~discard[:, None]
        w_g = c_weight**2 / (c_weight**2 + pt["host_g2"])
        w = w_g * nu1 / (nu + (r / sigma) ** 2) * use
        bi, bj = slice(i * D, (i + 1) * D), slice(j * D, (j + 1) * D)
        cols = F + np.arange(pt["n"])
        if i == j:
            A = pt["A_i"] + pt["A_t"]
            H[bi, bi] += np.einsum("npa,np,npb->ab", A, w, A)
            H[bi, F:] += np.einsum("npa,np,np->na", A, w, pt["J_rho"]).T
            grad[bi] += np.einsum("npa,np,np->a", A, w, r)
        else:
            A_i, A_t = pt["A_i"], pt["A_t"]
            H[bi, bi] += np.einsum("npa,np,npb->ab", A_i, w, A_i)
            H[bj, bj] += np.einsum("npa,np,npb->ab", A_t, w, A_t)
            Hij = np.einsum("npa,np,npb->ab", A_i, w, A_t)
            H[bi, bj] += Hij
            H[bj, bi] += Hij.T
            H[bi, F:] += np.einsum("npa,np,np->na", A_i, w, pt["J_rho"]).T
            H[bj, F:] += np.einsum("npa,np,np->na", A_t, w, pt["J_rho"]).T
            grad[bi] += np.einsum("npa,np,np->a", A_i, w, r)
            grad[bj] += np.einsum("npa,np,np->a", A_t, w, r)
        H[F + np.arange(pt["n"]), F + np.arange(pt["n"])] += np.einsum(
            "np,np->n", w * pt["J_rho"], pt["J_rho"]
        )
        grad[cols] += np.einsum("np,np->n", w * pt["J_rho"], r)
    H[F:, :F] = H[:F, F:].T

    # express in delta-from-first-estimate coordinates: residuals are at the
    # current state x_bar [+] dacc, so b = H @ dacc - grad
    dacc = np.concatenate(
        [kf.state.box_minus(kf.fej_state, dim=D) for kf in kfs] + [np.zeros(m)]
    )
    b = H @ dacc - grad

    # fold in the existing prior (already in delta coordinates)
    if window.prior is not None and window.prior.ids:
        order = [kf.id for kf in kfs]
        cols = []
        for kid in window.prior.ids:
            jj = order.index(kid)
            cols.extend(range(jj * D, (jj + 1) * D))
        cols = np.asarray(cols, int)
        H[np.ix_(cols, cols)] += window.prior.H
        b[cols] += window.prior.b

    # eliminate k's points (dropping unconstrained ones), then its frame vars
    pt_diag = np.diag(H)[F:]
    dead = np.flatnonzero(pt_diag <= 1e-300) + F
    if len(dead):
        keep = np.setdiff1d(np.arange(F + m), dead)
        H = H[np.ix_(keep, keep)]
        b = b[keep]
    n_pts = H.shape[0] - F
    if n_pts:
        H, b = schur_eliminate(H, b, np.arange(F, F + n_pts))
    H, b = schur_eliminate(H, b, np.arange(k * D, (k + 1) * D))

    # condition: symmetrize and clamp negative eigenvalues
    H = (H + H.T) / 2.0
    w_eig, V = np.linalg.eigh(H)
    if w_eig.size and w_eig[0] < -1e-9 * max(1.0, abs(w_eig[-1])):
        H = V @ np.diag(np.clip(w_eig, 0.0, None)) @ V.T
        H = (H + H.T) / 2.0

    remaining = [kf.id for idx, kf in enumerate(kfs) if idx != k]
    window.prior = MargPrior(remaining, H, b, D)
    window.remove(k)
