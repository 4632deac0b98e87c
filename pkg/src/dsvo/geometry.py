"""Camera models, SE(3) transforms, projection/warping and manifold updates.

Conventions used throughout the package:

* Poses are camera-to-world transforms: a world point is ``q = R @ p + t``
  for a point ``p`` in the camera frame.
* Relative transforms are derived as ``T_i_to_j = inv(T_j) @ T_i``.
* Tangent vectors are 6-dim with ordering (rotation, translation).
* Pose updates are left-multiplicative: ``T <- exp(delta) @ T``.
* Pyramid cameras are scaled by exact powers of two per level
  (``fx' = fx / 2**level`` and likewise for fy, cx, cy, width, height).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BehindCameraError(ValueError):
    """Raised when projecting a point with non-positive depth."""


class InvalidDepthError(ValueError):
    """Raised when backprojecting with a non-positive inverse depth."""


@dataclass(frozen=True)
class Pinhole:
    """Rectified pinhole camera (no distortion)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, level: int) -> "Pinhole":
        """Camera for the given pyramid level (pure halving per level)."""
        if level < 0:
            raise ValueError("level must be >= 0")
        s = 2.0 ** (-level)
        return Pinhole(
            self.fx * s,
            self.fy * s,
            self.cx * s,
            self.cy * s,
            max(1, int(np.ceil(self.width * s))),
            max(1, int(np.ceil(self.height * s))),
        )

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def scale_camera(cam: Pinhole, level: int) -> Pinhole:
    return cam.scaled(level)


@dataclass(frozen=True)
class StereoRig:
    """Rectified stereo rig; left and right share intrinsics."""

    cam: Pinhole
    baseline: float

    def __post_init__(self):
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")


# ---------------------------------------------------------------------------
# SO(3) / SE(3)
# ---------------------------------------------------------------------------


def skew(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a Taylor fallback near zero."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-8:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # near pi: use the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from off-diagonals
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = A[:, i] / axis[i]
            axis = axis / np.linalg.norm(axis)
        return theta * axis
    return (
        theta
        / (2.0 * np.sin(theta))
        * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    )


def _so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * W + b * (W @ W)


def _so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    half = theta / 2.0
    cot = half / np.tan(half)
    return np.eye(3) - 0.5 * W + (1.0 - cot) / theta**2 * (W @ W)


class Pose:
    """Rigid transform (rotation + translation); camera-to-world by convention."""

    __slots__ = ("R", "t")

    def __init__(self, R: np.ndarray | None = None, t: np.ndarray | None = None):
        self.R = np.eye(3) if R is None else np.asarray(R, dtype=float).copy()
        self.t = np.zeros(3) if t is None else np.asarray(t, dtype=float).reshape(3).copy()

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def exp(xi: np.ndarray) -> "Pose":
        """Exponential map of a (rot, trans) tangent vector."""
        xi = np.asarray(xi, dtype=float).reshape(6)
        w, v = xi[:3], xi[3:]
        R = so3_exp(w)
        t = _so3_left_jacobian(w) @ v
        return Pose(R, t)

    def log(self) -> np.ndarray:
        w = so3_log(self.R)
        v = _so3_left_jacobian_inv(w) @ self.t
        return np.concatenate([w, v])

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.t)

    def act(self, p: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.t

    def copy(self) -> "Pose":
        return Pose(self.R, self.t)

    def retract(self, xi: np.ndarray) -> "Pose":
        """Left-multiplicative update with re-orthonormalization."""
        out = Pose.exp(xi).compose(self)
        out.orthonormalize()
        return out

    def orthonormalize(self):
        U, _, Vt = np.linalg.svd(self.R)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] = -U[:, -1]
            R = U @ Vt
        self.R = R

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def __repr__(self):
        return f"Pose(t={self.t}, R=\n{self.R})"


def relative_pose(pose_i: Pose, pose_j: Pose) -> Pose:
    """Transform mapping camera-i coordinates into camera-j coordinates."""
    return pose_j.inverse().compose(pose_i)


def right_camera_pose(left: Pose, rig: StereoRig) -> Pose:
    """Camera-to-world pose of the right camera given the left one."""
    return left.compose(Pose(np.eye(3), np.array([rig.baseline, 0.0, 0.0])))


# ---------------------------------------------------------------------------
# Projection / warping
# ---------------------------------------------------------------------------


def project(cam: Pinhole, p: np.ndarray) -> np.ndarray:
    """Pinhole projection of points (..., 3) -> (..., 2).

    Raises BehindCameraError if any point has Z <= 0.
    """
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point behind camera (Z <= 0)")
    return np.stack(
        [cam.fx * p[..., 0] / z + cam.cx, cam.fy * p[..., 1] / z + cam.cy], axis=-1
    )


def project_masked(cam: Pinhole, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Projection that flags Z <= 0 instead of raising (batch internal use)."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    ok = z > 1e-12
    zs = np.where(ok, z, 1.0)
    uv = np.stack(
        [cam.fx * p[..., 0] / zs + cam.cx, cam.fy * p[..., 1] / zs + cam.cy], axis=-1
    )
    return uv, ok


def backproject(cam: Pinhole, uv: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Inverse projection of pixels (..., 2) with inverse depths (...,)."""
    uv = np.asarray(uv, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise InvalidDepthError("inverse depth must be positive")
    x = (uv[..., 0] - cam.cx) / (cam.fx * rho)
    y = (uv[..., 1] - cam.cy) / (cam.fy * rho)
    return np.stack([x, y, 1.0 / rho + np.zeros_like(x)], axis=-1)


def warp(
    uv: np.ndarray, rho: np.ndarray, T_ij: Pose, cam: Pinhole
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Warp pixels from frame i into frame j through T_ij.

    Returns (uv_j, rho_j, ok) where ok flags points that land in front of
    the target camera. Behind-camera is a soft drop signal, not an error.
    """
    p = backproject(cam, uv, rho)
    pj = T_ij.act(p)
    uvj, ok = project_masked(cam, pj)
    z = pj[..., 2]
    rho_j = np.where(ok, 1.0 / np.where(ok, z, 1.0), 0.0)
    return uvj, rho_j, ok


def projection_jacobian(cam: Pinhole, p: np.ndarray) -> np.ndarray:
    """d(uv)/d(p) for points (..., 3); returns (..., 2, 3)."""
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    iz = 1.0 / z
    iz2 = iz * iz
    J = np.zeros(p.shape[:-1] + (2, 3))
    J[..., 0, 0] = cam.fx * iz
    J[..., 0, 2] = -cam.fx * x * iz2
    J[..., 1, 1] = cam.fy * iz
    J[..., 1, 2] = -cam.fy * y * iz2
    return J


def warp_jacobians(
    uv: np.ndarray, rho: float, T_ij: Pose, cam: Pinhole
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians of the warped pixel w.r.t. the pose tangent and rho.

    The pose perturbation is left-multiplicative on T_ij with (rot, trans)
    ordering. Returns (J_pose (2, 6), J_rho (2,)) for a single pixel.
    """
    p = backproject(cam, np.asarray(uv, float), float(rho))
    pj = T_ij.act(p)
    Jp = projection_jacobian(cam, pj)
    # d(exp(d) pj)/dd = [-pj^ | I]
    Dpose = np.concatenate([-skew(pj), np.eye(3)], axis=1)
    J_pose = Jp @ Dpose
    # dp/drho = -p / rho; dpj/drho = R_ij dp/drho
    dpj = T_ij.R @ (-p / rho)
    J_rho = Jp @ dpj
    return J_pose, J_rho
