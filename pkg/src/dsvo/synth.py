"""Synthetic scene rendering with analytically known poses and depths.

Scenes are textured planes; the texture is multi-octave value noise sampled
with the same bilinear convention as the image module, so a rendered view of
a plane is an exact warp of any other view. This gives a ground-truth oracle
at desk scale: every pixel's depth and every camera pose are known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pinhole, Pose, StereoRig, right_camera_pose
from .image import StereoFrame, build_pyramid

_HASH_A = 127.1
_HASH_B = 311.7
_HASH_C = 43758.5453123


def _lattice(ix: np.ndarray, iy: np.ndarray, octave: int) -> np.ndarray:
    """Deterministic pseudo-random lattice values in [0, 1)."""
    s = np.sin(ix * _HASH_A + iy * _HASH_B + (octave + 1) * 74.7) * _HASH_C
    return s - np.floor(s)


def value_noise(x: np.ndarray, y: np.ndarray, octave: int) -> np.ndarray:
    """Bilinear value noise on the unit lattice, in [0, 1)."""
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    v00 = _lattice(x0, y0, octave)
    v10 = _lattice(x0 + 1, y0, octave)
    v01 = _lattice(x0, y0 + 1, octave)
    v11 = _lattice(x0 + 1, y0 + 1, octave)
    top = v00 * (1 - fx) + v10 * fx
    bot = v01 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def texture(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Multi-octave texture over plane-local coordinates (meters), 0..255."""
    out = np.full(np.broadcast_shapes(np.shape(x), np.shape(y)), 128.0)
    for octave, (freq, amp) in enumerate([(4.0, 55.0), (12.0, 28.0), (36.0, 14.0)]):
        out = out + amp * (2.0 * value_noise(x * freq, y * freq, octave) - 1.0)
    return np.clip(out, 0.0, 255.0)


@dataclass(frozen=True)
class Plane:
    """World plane: points p with normal . (p - origin) = 0."""

    origin: np.ndarray
    normal: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray

    @staticmethod
    def frontal(z: float) -> "Plane":
        return Plane(
            np.array([0.0, 0.0, z]),
            np.array([0.0, 0.0, -1.0]),
            np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0]),
        )

    @staticmethod
    def tilted(z: float, slope: float) -> "Plane":
        """Depth ramp: depth grows with world x at the given slope."""
        n = np.array([slope, 0.0, -1.0])
        n = n / np.linalg.norm(n)
        u = np.array([1.0, 0.0, slope])
        u = u / np.linalg.norm(u)
        return Plane(np.array([0.0, 0.0, z]), n, u, np.array([0.0, 1.0, 0.0]))


class Scene:
    """One or two textured planes; rays hit the nearest valid plane."""

    def __init__(self, planes: list[Plane], split_x: float | None = None):
        # split_x: with two planes, world x < split_x hits planes[0]
        self.planes = planes
        self.split_x = split_x

    @staticmethod
    def make(name: str, depth: float = 2.0) -> "Scene":
        if name == "plane":
            return Scene([Plane.frontal(depth)])
        if name == "ramp":
            return Scene([Plane.tilted(depth, 0.35)])
        if name == "two-planes":
            return Scene(
                [Plane.frontal(depth), Plane.frontal(depth * 1.8)], split_x=0.0
            )
        raise ValueError(f"unknown scene {name!r}")

    def _hit(self, plane: Plane, origins, dirs):
        denom = dirs @ plane.normal
        denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
        lam = ((plane.origin - origins) @ plane.normal) / denom
        pts = origins + lam[..., None] * dirs
        return lam, pts

    def intersect(self, origins: np.ndarray, dirs: np.ndarray):
        """Returns (points, lambdas, plane_index, valid) for world rays."""
        lam0, pts0 = self._hit(self.planes[0], origins, dirs)
        if len(self.planes) == 1:
            return pts0, lam0, np.zeros(lam0.shape, int), lam0 > 1e-6
        lam1, pts1 = self._hit(self.planes[1], origins, dirs)
        use1 = pts0[..., 0] >= self.split_x
        lam = np.where(use1, lam1, lam0)
        pts = np.where(use1[..., None], pts1, pts0)
        return pts, lam, use1.astype(int), lam > 1e-6

    def shade(self, pts: np.ndarray, which: np.ndarray) -> np.ndarray:
        out = np.zeros(pts.shape[:-1])
        for k, plane in enumerate(self.planes):
            rel = pts - plane.origin
            x = rel @ plane.axis_u
            y = rel @ plane.axis_v
            # offset per plane so the two textures differ
            val = texture(x + 10.0 * k, y - 7.0 * k)
            out = np.where(which == k, val, out)
        return out

    def render(self, cam: Pinhole, pose: Pose):
        """Render (intensity, depth) for a camera at the given pose."""
        u, v = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        d_cam = np.stack(
            [(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u, float)],
            axis=-1,
        )
        dirs = d_cam @ pose.R.T
        origins = pose.t
        pts, lam, which, valid = self.intersect(origins, dirs)
        img = self.shade(pts, which)
        depth = np.where(valid, lam, 0.0)  # d_cam has unit z: lam == camera depth
        return np.where(valid, img, 0.0), depth


def motion_path(spec: str, n_frames: int) -> list[Pose]:
    """Parametric ground-truth pose path.

    Supported specs: ``static``, ``translate:vx,vy,vz`` (meters per frame)
    and ``orbit:radius,deg_per_frame`` (yawing arc about a vertical axis
    behind the start pose).
    """
    name, _, args = spec.partition(":")
    if name == "static":
        return [Pose.identity() for _ in range(n_frames)]
    if name == "translate":
        v = np.array([float(a) for a in args.split(",")])
        if len(v) != 3:
            raise ValueError("translate motion needs vx,vy,vz")
        return [Pose(np.eye(3), v * k) for k in range(n_frames)]
    if name == "orbit":
        radius, deg = (float(a) for a in args.split(","))
        center = np.array([0.0, 0.0, -radius])
        poses = []
        for k in range(n_frames):
            th = np.deg2rad(deg) * k
            R = np.array(
                [
                    [np.cos(th), 0.0, np.sin(th)],
                    [0.0, 1.0, 0.0],
                    [-np.sin(th), 0.0, np.cos(th)],
                ]
            )
            t = center + radius * np.array([np.sin(th), 0.0, np.cos(th)])
            poses.append(Pose(R, t))
        return poses
    raise ValueError(f"unknown motion spec {spec!r}")


def make_sequence(
    scene: Scene,
    poses: list[Pose],
    rig: StereoRig,
    num_levels: int = 5,
    noise: float = 0.0,
    with_depth: bool = False,
    seed: int = 0,
    dt: float = 0.05,
    stereo: bool = True,
) -> list[StereoFrame]:
    """Render an in-memory stereo sequence along a pose path."""
    rng = np.random.default_rng(seed)
    frames = []
    for k, pose in enumerate(poses):
        img_l, depth = scene.render(rig.cam, pose)
        if noise > 0:
            img_l = img_l + rng.normal(0.0, noise, img_l.shape)
        right = None
        if stereo:
            img_r, _ = scene.render(rig.cam, right_camera_pose(pose, rig))
            if noise > 0:
                img_r = img_r + rng.normal(0.0, noise, img_r.shape)
            right = build_pyramid(img_r, num_levels)
        frames.append(
            StereoFrame(
                timestamp=k * dt,
                left=build_pyramid(img_l, num_levels),
                right=right,
                depth=depth if with_depth else None,
                raw_left=img_l,
            )
        )
    return frames
