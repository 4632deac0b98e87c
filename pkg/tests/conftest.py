import numpy as np
import pytest

from dsvo.geometry import Pinhole, Pose, StereoRig
from dsvo.image import build_pyramid


@pytest.fixture
def cam():
    return Pinhole(420.0, 420.0, 319.5, 239.5, 640, 480)


@pytest.fixture
def rig(cam):
    return StereoRig(cam, 0.1)


@pytest.fixture
def small_cam():
    return Pinhole(210.0, 210.0, 159.5, 119.5, 320, 240)


@pytest.fixture
def small_rig(small_cam):
    return StereoRig(small_cam, 0.1)


def smooth_image(width, height, seed=0):
    """Band-limited random texture, safe for finite-difference Jacobian tests."""
    rng = np.random.default_rng(seed)
    v = np.linspace(0, 1, height)[:, None]
    u = np.linspace(0, 1, width)[None, :]
    img = np.full((height, width), 128.0)
    for k in range(1, 7):
        au, av, ph = rng.uniform(-1, 1, 3)
        img += (40.0 / k) * np.sin(
            2 * np.pi * k * (au * u + av * v) + 3 * ph
        )
    return img


@pytest.fixture
def smooth_pyr():
    return build_pyramid(smooth_image(128, 96, seed=3), 3)


def make_keyframe(kf_id, frame, pose, rig, num_levels, point_filter=None):
    """Keyframe with points selected from the frame and depths taken from
    its rendered ground-truth depth image."""
    from dsvo.config import SelectConfig
    from dsvo.frames import FrameStateVars, Keyframe
    from dsvo.select import SelectorState, extract_patches, select_points
    from dsvo.stereo import InitSource

    h, w = frame.left.shape
    pts, _ = select_points(
        frame.left, np.zeros((h, w), bool), SelectorState(16.0), SelectConfig()
    )
    if point_filter is not None:
        pts = pts[point_filter(pts)]
    batch = extract_patches(frame.left, pts)
    pts = pts[batch.valid]
    z = frame.depth[pts[:, 1].astype(int), pts[:, 0].astype(int)]
    rho = np.where(z > 0, 1.0 / np.maximum(z, 1e-9), 0.0)
    keep = rho > 0
    kf = Keyframe(
        kf_id,
        frame,
        FrameStateVars(pose),
        pts[keep],
        rho[keep],
        np.full(int(keep.sum()), InitSource.DEPTH, dtype=object),
        batch.intensities[batch.valid][keep],
        batch.gradients[batch.valid][keep],
    )
    kf.refresh_cache(rig.cam, num_levels)
    return kf


def make_window(scene, kf_poses, rig, num_levels=3, point_filters=None, noise=0.0):
    """Sliding window populated with keyframes rendered at the given poses."""
    from dsvo.frames import SlidingWindow
    from dsvo.synth import make_sequence

    frames = make_sequence(
        scene, kf_poses, rig, num_levels=num_levels, noise=noise, with_depth=True
    )
    window = SlidingWindow(rig, max(len(kf_poses), 4), num_levels)
    for k, (frame, pose) in enumerate(zip(frames, kf_poses)):
        flt = point_filters[k] if point_filters else None
        window.add(make_keyframe(k, frame, pose, rig, num_levels, flt))
    return window, frames


def random_pose(rng, rot_scale=0.3, t_scale=1.0):
    return Pose.exp(
        np.concatenate(
            [rng.uniform(-rot_scale, rot_scale, 3), rng.uniform(-t_scale, t_scale, 3)]
        )
    )
