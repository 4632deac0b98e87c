import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose
from dsvo.geometry import (
    BehindCameraError,
    InvalidDepthError,
    Pinhole,
    Pose,
    StereoRig,
    backproject,
    project,
    relative_pose,
    right_camera_pose,
    scale_camera,
    warp,
    warp_jacobians,
)
from dsvo.frames import FrameStateVars

CAM = Pinhole(100.0, 100.0, 320.0, 240.0, 640, 480)


class TestProject:
    def test_on_axis(self):
        assert np.allclose(project(CAM, np.array([0.0, 0.0, 2.0])), [320.0, 240.0])

    def test_off_axis(self):
        assert np.allclose(project(CAM, np.array([1.0, 0.0, 2.0])), [370.0, 240.0])

    def test_zero_depth_raises(self):
        with pytest.raises(BehindCameraError):
            project(CAM, np.array([0.0, 0.0, 0.0]))


class TestBackproject:
    def test_principal_point(self):
        p = backproject(CAM, np.array([320.0, 240.0]), 0.5)
        assert np.allclose(p, [0.0, 0.0, 2.0])

    def test_off_axis(self):
        p = backproject(CAM, np.array([420.0, 240.0]), 1.0)
        assert np.allclose(p, [1.0, 0.0, 1.0])

    def test_nonpositive_rho_raises(self):
        with pytest.raises(InvalidDepthError):
            backproject(CAM, np.array([320.0, 240.0]), 0.0)

    @given(
        u=st.floats(1, 638),
        v=st.floats(1, 478),
        rho=st.floats(0.01, 5.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, u, v, rho):
        uv = np.array([u, v])
        assert np.allclose(project(CAM, backproject(CAM, uv, rho)), uv, atol=1e-9)


class TestWarp:
    def test_identity_transform(self):
        uv = np.array([[100.0, 50.0], [300.0, 400.0]])
        out, rho_j, ok = warp(uv, np.array([0.5, 1.0]), Pose.identity(), CAM)
        assert np.allclose(out, uv, atol=1e-12)
        assert np.allclose(rho_j, [0.5, 1.0])
        assert ok.all()

    def test_stereo_baseline_gives_disparity(self):
        B, rho = 0.5, 0.8
        T = Pose(np.eye(3), np.array([-B, 0.0, 0.0]))
        uv = np.array([[300.0, 200.0]])
        out, _, ok = warp(uv, np.array([rho]), T, CAM)
        assert ok[0]
        assert np.allclose(out[0], [300.0 - CAM.fx * B * rho, 200.0])

    def test_inverse_warp_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            T = random_pose(rng, rot_scale=0.2, t_scale=0.2)
            uv = np.array([rng.uniform(100, 540), rng.uniform(100, 380)])
            rho = rng.uniform(0.2, 1.0)
            out, rho_j, ok = warp(uv[None], np.array([rho]), T, CAM)
            if not ok[0]:
                continue
            back, _, ok2 = warp(out, rho_j, T.inverse(), CAM)
            assert ok2[0]
            assert np.allclose(back[0], uv, atol=1e-9)


class TestBoxPlus:
    def test_zero_delta_is_identity(self):
        rng = np.random.default_rng(1)
        x = FrameStateVars(random_pose(rng))
        y = x.box_plus(np.zeros(10))
        assert np.allclose(y.pose.matrix, x.pose.matrix)

    def test_pure_translation(self):
        x = FrameStateVars()
        y = x.box_plus(np.array([0, 0, 0, 1.0, 2.0, 3.0]))
        assert np.allclose(y.pose.R, np.eye(3))
        assert np.allclose(y.pose.t, [1.0, 2.0, 3.0])

    def test_local_inverse(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = FrameStateVars(random_pose(rng))
            d = rng.uniform(-0.1, 0.1, 10)
            y = x.box_plus(d).box_plus(-d)
            assert np.allclose(y.pose.matrix, x.pose.matrix, atol=1e-9)
            assert np.allclose(y.aff_l, x.aff_l, atol=1e-12)

    def test_orthonormal_after_many_updates(self):
        rng = np.random.default_rng(3)
        x = FrameStateVars()
        for _ in range(10_000):
            x = x.box_plus(rng.uniform(-0.05, 0.05, 10))
        R = x.pose.R
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9


class TestScaleCamera:
    def test_level_zero_identity(self):
        assert scale_camera(CAM, 0) == CAM

    def test_fx_halves(self):
        assert scale_camera(CAM, 2).fx == 25.0

    def test_projection_scales_exactly(self):
        p = np.array([0.7, -0.3, 2.5])
        uv0 = project(CAM, p)
        for lv in range(1, 4):
            uvl = project(scale_camera(CAM, lv), p)
            assert np.allclose(uvl, uv0 / 2**lv, atol=1e-9)


class TestPoseAlgebra:
    def test_exp_log_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            xi = rng.uniform(-1, 1, 6)
            assert np.allclose(Pose.exp(xi).log(), xi, atol=1e-9)

    def test_relative_pose_definition(self):
        rng = np.random.default_rng(5)
        Ti, Tj = random_pose(rng), random_pose(rng)
        Tij = relative_pose(Ti, Tj)
        assert np.allclose(Tij.matrix, Tj.inverse().compose(Ti).matrix)

    def test_right_camera_offset(self):
        rig = StereoRig(CAM, 0.25)
        rng = np.random.default_rng(6)
        T = random_pose(rng)
        Tr = right_camera_pose(T, rig)
        # right camera center sits one baseline along the left camera's x axis
        assert np.allclose(Tr.t, T.t + T.R @ np.array([rig.baseline, 0, 0]))
        assert np.allclose(Tr.R, T.R)


class TestWarpJacobians:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(7)
        checked = 0
        eps = 1e-6
        while checked < 100:
            T = random_pose(rng, rot_scale=0.3, t_scale=0.3)
            uv = np.array([rng.uniform(50, 590), rng.uniform(50, 430)])
            rho = rng.uniform(0.2, 2.0)
            out, _, ok = warp(uv[None], np.array([rho]), T, CAM)
            if not ok[0]:
                continue
            J_pose, J_rho = warp_jacobians(uv, rho, T, CAM)
            for k in range(6):
                d = np.zeros(6)
                d[k] = eps
                Tp = Pose.exp(d).compose(T)
                Tm = Pose.exp(-d).compose(T)
                up, _, okp = warp(uv[None], np.array([rho]), Tp, CAM)
                um, _, okm = warp(uv[None], np.array([rho]), Tm, CAM)
                assert okp[0] and okm[0]
                fd = (up[0] - um[0]) / (2 * eps)
                denom = max(1.0, np.abs(fd).max())
                assert np.abs(J_pose[:, k] - fd).max() / denom < 1e-5
            up, _, _ = warp(uv[None], np.array([rho + eps]), T, CAM)
            um, _, _ = warp(uv[None], np.array([rho - eps]), T, CAM)
            fd = (up[0] - um[0]) / (2 * eps)
            denom = max(1.0, np.abs(fd).max())
            assert np.abs(J_rho - fd).max() / denom < 1e-5
            checked += 1


class TestInvariantValidation:
    def test_bad_focal_rejected(self):
        with pytest.raises(ValueError):
            Pinhole(-1.0, 100.0, 320.0, 240.0, 640, 480)

    def test_principal_point_outside_rejected(self):
        with pytest.raises(ValueError):
            Pinhole(100.0, 100.0, 700.0, 240.0, 640, 480)

    def test_bad_baseline_rejected(self):
        with pytest.raises(ValueError):
            StereoRig(CAM, 0.0)
