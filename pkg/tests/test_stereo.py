import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_image
from dsvo.config import StereoMatchConfig
from dsvo.geometry import Pinhole, Pose, StereoRig, warp
from dsvo.image import build_pyramid
from dsvo.stereo import (
    InitSource,
    disparity_to_inv_depth,
    init_depths,
    match_stereo,
    zncc,
)

RIG = StereoRig(Pinhole(100.0, 100.0, 320.0, 240.0, 640, 480), 0.5)


class TestZncc:
    def test_self_correlation(self):
        p = np.arange(35.0)
        assert zncc(p, p) == 1.0

    def test_sign_inversion(self):
        p = np.arange(35.0)
        assert zncc(p, -p + 7.0) == -1.0

    def test_constant_patch_is_no_match(self):
        assert zncc(np.full(35, 3.0), np.arange(35.0)) == 0.0

    @given(
        alpha=st.floats(0.1, 10.0),
        beta=st.floats(-50.0, 50.0),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=100, deadline=None)
    def test_affine_invariance_and_symmetry(self, alpha, beta, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0, 255, 35)
        b = rng.uniform(0, 255, 35)
        assert abs(zncc(alpha * a + beta, b) - zncc(a, b)) < 1e-12
        assert abs(zncc(a, b) - zncc(b, a)) < 1e-12
        assert -1.0 <= zncc(a, b) <= 1.0


def shifted_pair(shift, width=256, height=128, levels=3, seed=12):
    base = smooth_image(width + 64, height, seed=seed)
    left = base[:, 32 : 32 + width]
    right = base[:, 32 + shift : 32 + shift + width]
    return build_pyramid(left, levels), build_pyramid(right, levels)


class TestMatchStereo:
    def interior_points(self, width=256, height=128):
        uu, vv = np.meshgrid(
            np.arange(60, width - 60, 16), np.arange(24, height - 24, 16)
        )
        return np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(float)

    def test_known_integer_shift(self):
        left, right = shifted_pair(8)
        pts = self.interior_points()
        res = match_stereo(left, right, pts, StereoMatchConfig(max_disparity=32))
        matched = [r for r in res if r.matched]
        assert len(matched) > 0.8 * len(pts)
        for r in matched:
            assert abs(r.disparity - 8.0) <= 0.25

    def test_zero_disparity(self):
        left, _ = shifted_pair(0)
        pts = self.interior_points()
        res = match_stereo(left, left, pts, StereoMatchConfig(max_disparity=32))
        for r in res:
            if r.matched:
                assert abs(r.disparity) <= 0.25

    def test_constant_region_no_match(self):
        img = np.full((128, 256), 50.0)
        pyr = build_pyramid(img, 3)
        res = match_stereo(pyr, pyr, np.array([[128.0, 64.0]]), StereoMatchConfig())
        assert not res[0].matched

    def test_coarse_to_fine_agrees_with_bruteforce(self):
        left, right = shifted_pair(11, seed=13)
        pts = self.interior_points()
        ctf = match_stereo(left, right, pts, StereoMatchConfig(max_disparity=32))
        # brute force: full range at the finest level only
        left0 = build_pyramid(left[0].intensity, 1)
        right0 = build_pyramid(right[0].intensity, 1)
        bf = match_stereo(left0, right0, pts, StereoMatchConfig(max_disparity=32))
        both = [
            (a, b) for a, b in zip(ctf, bf) if a.matched and b.matched
        ]
        agree = sum(1 for a, b in both if abs(a.disparity - b.disparity) <= 0.5)
        assert agree >= 0.95 * len(both)


class TestDisparityToInvDepth:
    def test_example(self):
        assert disparity_to_inv_depth(10.0, RIG) == 0.2

    def test_zero_stays_uninitialized(self):
        assert disparity_to_inv_depth(0.0, RIG) == 0.0

    def test_closes_loop_with_warp(self):
        d = 7.3
        rho = disparity_to_inv_depth(d, RIG)
        T_lr = Pose(np.eye(3), np.array([-RIG.baseline, 0.0, 0.0]))
        uv = np.array([[300.0, 200.0]])
        out, _, ok = warp(uv, np.array([rho]), T_lr, RIG.cam)
        assert ok[0]
        assert abs((uv[0, 0] - out[0, 0]) - d) < 1e-9


class TestInitDepths:
    def test_depth_image_wins_over_stereo(self):
        left, right = shifted_pair(8)
        pts = np.array([[128.0, 64.0]])
        depth = np.full((128, 256), 2.0)
        rho, tags = init_depths(
            pts, RIG, depth_img=depth, left=left, right=right
        )
        assert rho[0] == 0.5
        assert tags[0] == InitSource.DEPTH

    def test_stereo_fallback(self):
        fx_b = RIG.cam.fx * RIG.baseline
        left, right = shifted_pair(8)
        pts = np.array([[128.0, 64.0]])
        rho, tags = init_depths(
            pts,
            RIG,
            left=left,
            right=right,
            match_cfg=StereoMatchConfig(max_disparity=32),
        )
        assert tags[0] == InitSource.STEREO
        assert abs(rho[0] - 8.0 / fx_b) < 0.5 / fx_b

    def test_map_point_cell_average(self):
        pts = np.array([[100.0, 50.0]])
        cell_avg = {(50 // 16, 100 // 16): 0.3}
        rho, tags = init_depths(pts, RIG, map_cell_rho=cell_avg)
        assert rho[0] == 0.3
        assert tags[0] == InitSource.MAP

    def test_uninitialized_stays_zero(self):
        rho, tags = init_depths(np.array([[10.0, 10.0]]), RIG)
        assert rho[0] == 0.0
        assert tags[0] == InitSource.NONE

    def test_invalid_depth_value_skipped(self):
        depth = np.zeros((128, 256))
        pts = np.array([[100.0, 50.0]])
        rho, tags = init_depths(pts, RIG, depth_img=depth)
        assert tags[0] == InitSource.NONE

    def test_priority_is_total(self):
        left, right = shifted_pair(8)
        depth = np.zeros((128, 256))
        depth[60:70, 120:140] = 2.0
        pts = np.array([[128.0, 64.0], [80.0, 40.0], [10.0, 10.0]])
        rho, tags = init_depths(
            pts,
            RIG,
            depth_img=depth,
            left=left,
            right=right,
            match_cfg=StereoMatchConfig(max_disparity=32),
        )
        for r, t in zip(rho, tags):
            assert (t == InitSource.NONE) == (r == 0.0)
