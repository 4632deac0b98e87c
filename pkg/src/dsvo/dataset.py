"""Disk dataset loading: calibration file, image directories, frame stream.

Calibration file format (plain text, ``#`` comments):
    fx fy cx cy
    baseline B          (meters; optional for mono)
    size W H            (optional)
    depth_scale S       (optional; meters per depth unit, default 0.001)

Images are 8- or 16-bit grayscale PNG/PGM. 16-bit intensity images are
divided by 256 to the 8-bit scale; depth images are 16-bit scaled by
depth_scale.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .geometry import Pinhole, StereoRig
from .image import StereoFrame, build_pyramid


class DatasetError(ValueError):
    pass


@dataclass
class Calibration:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float | None = None
    size: tuple[int, int] | None = None  # (width, height)
    depth_scale: float = 0.001

    def rig(self) -> StereoRig:
        if self.baseline is None:
            raise DatasetError("calibration has no baseline; stereo rig unavailable")
        return StereoRig(self.camera(), self.baseline)

    def camera(self) -> Pinhole:
        if self.size is None:
            raise DatasetError("image size unknown; add a 'size W H' calibration line")
        return Pinhole(self.fx, self.fy, self.cx, self.cy, *self.size)

    def write(self, path: str):
        with open(path, "w") as f:
            f.write(f"{self.fx} {self.fy} {self.cx} {self.cy}\n")
            if self.baseline is not None:
                f.write(f"baseline {self.baseline}\n")
            if self.size is not None:
                f.write(f"size {self.size[0]} {self.size[1]}\n")
            f.write(f"depth_scale {self.depth_scale}\n")


def load_calibration(path: str) -> Calibration:
    calib = None
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if calib is None:
                    if len(tok) != 4:
                        raise ValueError("expected 4 intrinsics")
                    calib = Calibration(*[float(x) for x in tok])
                elif tok[0] == "baseline" and len(tok) == 2:
                    calib.baseline = float(tok[1])
                elif tok[0] == "size" and len(tok) == 3:
                    calib.size = (int(tok[1]), int(tok[2]))
                elif tok[0] == "depth_scale" and len(tok) == 2:
                    calib.depth_scale = float(tok[1])
                else:
                    raise ValueError(f"unrecognized entry {tok[0]!r}")
            except ValueError as e:
                raise DatasetError(f"{path}:{lineno}: bad calibration line: {e}")
    if calib is None:
        raise DatasetError(f"{path}: empty calibration file")
    return calib


def _list_images(directory: str) -> list[str]:
    exts = (".png", ".pgm", ".jpg", ".jpeg", ".tif", ".tiff")
    names = sorted(
        n for n in os.listdir(directory) if n.lower().endswith(exts)
    )
    return [os.path.join(directory, n) for n in names]


def _read_gray(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED | cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise DatasetError(f"unreadable image: {path}")
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2GRAY)
    if img.dtype == np.uint16:
        return img.astype(np.float64) / 256.0
    return img.astype(np.float64)


def _read_depth(path: str, scale: float) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError(f"unreadable depth image: {path}")
    return img.astype(np.float64) * scale


@dataclass
class Dataset:
    """Ordered stereo(+depth) frame source backed by image directories."""

    left_dir: str
    calib_path: str
    right_dir: str | None = None
    depth_dir: str | None = None
    timestamps_path: str | None = None
    num_levels: int = 5

    calib: Calibration = field(init=False)
    left_paths: list[str] = field(init=False)
    right_paths: list[str] | None = field(init=False)
    depth_paths: list[str] | None = field(init=False)
    timestamps: np.ndarray = field(init=False)

    def __post_init__(self):
        self.calib = load_calibration(self.calib_path)
        self.left_paths = _list_images(self.left_dir)
        if not self.left_paths:
            raise DatasetError(f"no images found in {self.left_dir}")
        if self.calib.size is None:
            h, w = _read_gray(self.left_paths[0]).shape
            self.calib.size = (w, h)
        self.right_paths = None
        self.depth_paths = None
        if self.right_dir is not None:
            self.right_paths = _list_images(self.right_dir)
            if len(self.right_paths) != len(self.left_paths):
                raise DatasetError(
                    f"stereo pair count mismatch: {len(self.left_paths)} left "
                    f"vs {len(self.right_paths)} right"
                )
        if self.depth_dir is not None:
            self.depth_paths = _list_images(self.depth_dir)
            if len(self.depth_paths) != len(self.left_paths):
                raise DatasetError("depth image count does not match left images")
        if self.timestamps_path is not None:
            self.timestamps = np.loadtxt(self.timestamps_path, usecols=0, ndmin=1)
            if len(self.timestamps) != len(self.left_paths):
                raise DatasetError("timestamp count does not match left images")
        else:
            self.timestamps = np.arange(len(self.left_paths), dtype=np.float64)

    def __len__(self):
        return len(self.left_paths)

    def frame(self, i: int) -> StereoFrame:
        left = build_pyramid(_read_gray(self.left_paths[i]), self.num_levels)
        right = None
        if self.right_paths is not None:
            right = build_pyramid(_read_gray(self.right_paths[i]), self.num_levels)
        depth = None
        if self.depth_paths is not None:
            depth = _read_depth(self.depth_paths[i], self.calib.depth_scale)
        return StereoFrame(
            timestamp=float(self.timestamps[i]),
            left=left,
            right=right,
            depth=depth,
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.frame(i)


def save_synthetic(
    out_dir: str,
    frames,
    rig: StereoRig,
    poses,
    timestamps,
    depth_scale: float = 0.001,
):
    """Write an in-memory synthetic sequence as a loadable on-disk dataset."""
    left_dir = os.path.join(out_dir, "left")
    right_dir = os.path.join(out_dir, "right")
    depth_dir = os.path.join(out_dir, "depth")
    os.makedirs(left_dir, exist_ok=True)
    has_right = frames[0].right is not None
    has_depth = frames[0].depth is not None
    if has_right:
        os.makedirs(right_dir, exist_ok=True)
    if has_depth:
        os.makedirs(depth_dir, exist_ok=True)

    def to_u16(intensity):
        return np.clip(intensity * 256.0, 0, 65535).astype(np.uint16)

    for i, fr in enumerate(frames):
        name = f"{i:06d}.png"
        cv2.imwrite(os.path.join(left_dir, name), to_u16(fr.left.levels[0].intensity))
        if has_right:
            cv2.imwrite(
                os.path.join(right_dir, name), to_u16(fr.right.levels[0].intensity)
            )
        if has_depth:
            d = np.clip(fr.depth / depth_scale, 0, 65535).astype(np.uint16)
            cv2.imwrite(os.path.join(depth_dir, name), d)

    h, w = frames[0].left.levels[0].intensity.shape
    calib = Calibration(
        rig.cam.fx,
        rig.cam.fy,
        rig.cam.cx,
        rig.cam.cy,
        baseline=rig.baseline,
        size=(w, h),
        depth_scale=depth_scale,
    )
    calib.write(os.path.join(out_dir, "calib.txt"))
    with open(os.path.join(out_dir, "times.txt"), "w") as f:
        for t in timestamps:
            f.write(f"{float(t):.9f}\n")

    from .trajectory import Trajectory

    Trajectory.from_poses(np.asarray(timestamps, float), list(poses)).write(
        os.path.join(out_dir, "groundtruth.txt")
    )
