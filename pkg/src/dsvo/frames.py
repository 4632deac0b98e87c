"""Keyframe and sliding-window state containers.

Point data is stored struct-of-arrays per keyframe: level-0 pixel
coordinates, inverse depths, per-level patch intensities/gradients, and the
precomputed inverse-compositional tracking Jacobians. The caches are
refreshed whenever the keyframe state changes (creation and after bundle
adjustment).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pinhole, Pose, StereoRig, projection_jacobian, skew
from .image import StereoFrame
from .select import PATCH_OFFSETS, PATCH_SIZE


class FrameStateVars:
    """Per-frame variables: left-camera pose plus affine brightness pairs.

    ``aff_l``/``aff_r`` are (a, b): log-gain and intensity offset. The right
    affine pair participates only in stereo mode.
    """

    __slots__ = ("pose", "aff_l", "aff_r")

    def __init__(self, pose: Pose | None = None, aff_l=None, aff_r=None):
        self.pose = pose.copy() if pose is not None else Pose.identity()
        self.aff_l = np.zeros(2) if aff_l is None else np.asarray(aff_l, float).copy()
        self.aff_r = np.zeros(2) if aff_r is None else np.asarray(aff_r, float).copy()

    def copy(self) -> "FrameStateVars":
        return FrameStateVars(self.pose, self.aff_l, self.aff_r)

    def box_plus(self, delta: np.ndarray) -> "FrameStateVars":
        """Pose updated by a left-multiplied exponential; affine additively.

        ``delta`` is (6 pose, 2 left-affine[, 2 right-affine]).
        """
        delta = np.asarray(delta, float).ravel()
        out = self.copy()
        out.pose = self.pose.retract(delta[:6])
        if len(delta) >= 8:
            out.aff_l = self.aff_l + delta[6:8]
        if len(delta) >= 10:
            out.aff_r = self.aff_r + delta[8:10]
        return out

    def box_minus(self, other: "FrameStateVars", dim: int = 10) -> np.ndarray:
        """Tangent delta such that ``other.box_plus(delta) == self``."""
        dp = self.pose.compose(other.pose.inverse()).log()
        parts = [dp, self.aff_l - other.aff_l]
        if dim >= 10:
            parts.append(self.aff_r - other.aff_r)
        return np.concatenate(parts)


@dataclass(frozen=True)
class DepthPoint:
    """Read-only view of one hosted point (testing/inspection convenience)."""

    uv: np.ndarray
    rho: float
    source: object
    host_id: int


class Keyframe:
    """A keyframe: pyramids, state, hosted points and precomputed caches."""

    def __init__(
        self,
        kf_id: int,
        frame: StereoFrame,
        state: FrameStateVars,
        uv: np.ndarray,
        rho: np.ndarray,
        sources,
        patch_int: np.ndarray,
        patch_grad: np.ndarray,
    ):
        self.id = kf_id
        self.frame = frame
        self.state = state
        self.fej_state: FrameStateVars | None = None
        self.uv = np.asarray(uv, float).reshape(-1, 2)
        self.rho = np.asarray(rho, float).copy()
        self.sources = np.asarray(sources, dtype=object)
        self.alive = self.rho > 0
        self.patch_int = patch_int  # (M, P, 5)
        self.patch_grad = patch_grad  # (M, P, 5, 2)
        # caches filled by refresh_cache
        self.host_pts: list[np.ndarray] = []  # per level (M, 5, 3) in host cam
        self.world_pts: list[np.ndarray] = []  # per level (M, 5, 3)
        self.ic_jac: list[np.ndarray] = []  # per level (M, 5, 6)

    @property
    def num_points(self) -> int:
        return len(self.rho)

    @property
    def num_active(self) -> int:
        return int(self.alive.sum())

    def point(self, i: int) -> DepthPoint:
        return DepthPoint(self.uv[i].copy(), float(self.rho[i]), self.sources[i], self.id)

    def set_fej(self):
        if self.fej_state is None:
            self.fej_state = self.state.copy()

    def lin_state(self) -> FrameStateVars:
        """Linearization state: first estimate when one exists."""
        return self.fej_state if self.fej_state is not None else self.state

    def refresh_cache(self, cam: Pinhole, num_levels: int):
        """Recompute per-level host/world points and tracking Jacobians.

        Jacobians follow the inverse-compositional convention: the residual
        is differentiated w.r.t. a world-frame motion of the hosted points,
        which is all host-side data and thus precomputable.
        """
        self.host_pts = []
        self.world_pts = []
        self.ic_jac = []
        rho = np.where(self.alive, self.rho, 1.0)
        pose = self.state
        R_i = pose.pose.R
        for lv in range(num_levels):
            cam_l = cam.scaled(lv)
            uv_l = self.uv[:, None, :] / 2.0**lv + PATCH_OFFSETS[None, :, :]
            x = (uv_l[..., 0] - cam_l.cx) / (cam_l.fx * rho[:, None])
            y = (uv_l[..., 1] - cam_l.cy) / (cam_l.fy * rho[:, None])
            z = np.broadcast_to((1.0 / rho)[:, None], x.shape)
            p = np.stack([x, y, z], axis=-1)  # (M, 5, 3) host cam
            q = pose.pose.act(p)  # (M, 5, 3) world
            Kp = projection_jacobian(cam_l, p)  # (M, 5, 2, 3)
            # d/de [pi(T_i^-1 Exp(e) q)] = Kp R_i^T [-q^ | I]
            D = np.zeros(p.shape[:-1] + (3, 6))
            qx, qy, qz = q[..., 0], q[..., 1], q[..., 2]
            D[..., 0, 1] = qz
            D[..., 0, 2] = -qy
            D[..., 1, 0] = -qz
            D[..., 1, 2] = qx
            D[..., 2, 0] = qy
            D[..., 2, 1] = -qx
            D[..., :, 3:] = np.eye(3)
            duv = np.einsum("...ij,jk,...kl->...il", Kp, R_i.T, D)  # (M,5,2,6)
            g = self.patch_grad[:, lv]  # (M, 5, 2)
            jac = np.einsum("mpi,mpij->mpj", g, duv)  # (M, 5, 6)
            self.host_pts.append(p)
            self.world_pts.append(q)
            self.ic_jac.append(jac)


class SlidingWindow:
    """At most N keyframes plus the running marginalization prior."""

    def __init__(self, rig: StereoRig, max_keyframes: int, num_levels: int):
        self.rig = rig
        self.max_keyframes = max_keyframes
        self.num_levels = num_levels
        self.keyframes: list[Keyframe] = []
        self.prior = None  # MargPrior, attached by the adjust module

    def __len__(self):
        return len(self.keyframes)

    @property
    def full(self) -> bool:
        return len(self.keyframes) >= self.max_keyframes

    @property
    def total_points(self) -> int:
        return sum(kf.num_active for kf in self.keyframes)

    def add(self, kf: Keyframe):
        if self.full:
            raise RuntimeError("window full; remove a keyframe first")
        self.keyframes.append(kf)

    def remove(self, index: int) -> Keyframe:
        return self.keyframes.pop(index)

    @property
    def stereo(self) -> bool:
        return all(kf.frame.right is not None for kf in self.keyframes)
