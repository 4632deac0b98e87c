"""Sliding-window keyframe lifecycle and the per-frame odometry state
machine: bootstrap, tracking, keyframe creation/removal, re-initialization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import adjust, align, select, stereo
from .config import OdometryConfig
from .frames import FrameStateVars, Keyframe, SlidingWindow
from .geometry import StereoRig
from .image import StereoFrame


class DegenerateKeyframeError(RuntimeError):
    """Fewer initialized points than the configured minimum."""


def should_create_keyframe(tr: align.TrackResult, q_min: float) -> bool:
    """A new keyframe is needed iff the tracking ratio falls below Q_min."""
    return tr.Q < q_min


def select_removal(window: SlidingWindow, tr: align.TrackResult) -> int:
    """Index of the keyframe with the fewest points visible in the current
    image; ties broken by oldest creation index."""
    counts = []
    for kf in window.keyframes:
        mask = tr.host_ids == kf.id
        counts.append(int(np.sum(tr.warp_ok & mask)))
    best = int(np.argmin(counts))  # argmin picks the first (oldest) on ties
    return best


def map_cell_averages(tr: align.TrackResult, cell_size: int) -> dict:
    """Average warped inverse depth of map projections per selection cell."""
    out: dict[tuple[int, int], list] = {}
    ok = tr.warp_ok & (tr.warp_rho > 0)
    for uv, rho in zip(tr.warp_uv[ok], tr.warp_rho[ok]):
        key = (int(uv[1] // cell_size), int(uv[0] // cell_size))
        out.setdefault(key, []).append(rho)
    return {k: float(np.mean(v)) for k, v in out.items()}


@dataclass
class FrameOutput:
    timestamp: float
    state: FrameStateVars
    status: str
    Q: float
    is_keyframe: bool
    track_ms: float = 0.0
    kf_ms: float = 0.0
    tracked_count: int = 0
    discard_uv: np.ndarray | None = None


@dataclass
class Odometry:
    """End-to-end odometry pipeline over a stream of stereo frames."""

    rig: StereoRig
    cfg: OdometryConfig = field(default_factory=OdometryConfig)
    n_threads: int = 1

    def __post_init__(self):
        self.window = SlidingWindow(self.rig, self.cfg.window.N, self.cfg.num_levels)
        self.selector = select.SelectorState(self.cfg.select.g_min_init)
        self.history: list[FrameStateVars] = []
        self._next_id = 0
        self._last_state = FrameStateVars()

    # -- keyframe creation ---------------------------------------------------

    def _build_keyframe(
        self,
        frame: StereoFrame,
        state: FrameStateVars,
        tr: align.TrackResult | None,
    ) -> Keyframe:
        cfg = self.cfg
        h, w = frame.left.shape
        if tr is not None:
            proj = tr.warp_uv[tr.warp_ok]
        else:
            proj = np.zeros((0, 2))
        mask = select.make_occupancy_mask(h, w, proj, cfg.select.dilation_radius)
        pts, self.selector = select.select_points(
            frame.left, mask, self.selector, cfg.select
        )
        batch = select.extract_patches(frame.left, pts)
        pts = pts[batch.valid]
        patch_int = batch.intensities[batch.valid]
        patch_grad = batch.gradients[batch.valid]

        cells = map_cell_averages(tr, cfg.select.cell_size) if tr is not None else None
        rho, tags = stereo.init_depths(
            pts,
            self.rig,
            depth_img=frame.depth,
            left=frame.left if frame.right is not None else None,
            right=frame.right,
            map_cell_rho=cells,
            cell_size=cfg.select.cell_size,
            match_cfg=cfg.stereo,
        )
        keep = rho > 0
        kf = Keyframe(
            self._next_id,
            frame,
            state.copy(),
            pts[keep],
            rho[keep],
            tags[keep],
            patch_int[keep],
            patch_grad[keep],
        )
        self._next_id += 1
        kf.refresh_cache(self.rig.cam, cfg.num_levels)
        return kf

    def create_keyframe(
        self,
        frame: StereoFrame,
        state: FrameStateVars,
        tr: align.TrackResult | None = None,
        allow_degenerate: bool = False,
    ) -> Keyframe:
        """Select points, initialize depths, insert and run PBA.

        Raises DegenerateKeyframeError when too few points could be
        initialized; during bootstrap the keyframe is inserted anyway.
        """
        kf = self._build_keyframe(frame, state, tr)
        degenerate = kf.num_active < self.cfg.window.min_points
        if degenerate and not allow_degenerate:
            raise DegenerateKeyframeError(
                f"only {kf.num_active} initialized points"
            )
        self.window.add(kf)
        if len(self.window) >= 2:
            adjust.run_pba(
                self.window,
                self.cfg.pba,
                self.n_threads,
                c_weight=self.cfg.align.c,
                nu=self.cfg.align.nu,
            )
        if degenerate:
            raise DegenerateKeyframeError(
                f"only {kf.num_active} initialized points (inserted)"
            )
        return kf

    # -- per-frame state machine ----------------------------------------------

    def process_frame(self, frame: StereoFrame) -> FrameOutput:
        if len(self.window) == 0:
            return self._bootstrap(frame, "init")

        t0 = time.perf_counter()
        init = align.predict_state(self.history)
        try:
            tr = align.track_frame(
                self.window, frame, init, self.cfg.align, self.n_threads
            )
        except align.TrackingLostError:
            return self._reinitialize(frame)
        track_ms = (time.perf_counter() - t0) * 1e3

        state = tr.state
        status = "tracking"
        is_kf = False
        kf_ms = 0.0
        if should_create_keyframe(tr, self.cfg.window.Q_min):
            t1 = time.perf_counter()
            try:
                if self.window.full:
                    victim = select_removal(self.window, tr)
                    adjust.marginalize_keyframe(
                        self.window,
                        victim,
                        self.cfg.pba,
                        self.n_threads,
                        c_weight=self.cfg.align.c,
                        nu=self.cfg.align.nu,
                    )
                kf = self.create_keyframe(frame, state, tr)
                state = kf.state
                status = "keyframe"
                is_kf = True
            except DegenerateKeyframeError:
                status = "degenerate"
            kf_ms = (time.perf_counter() - t1) * 1e3

        self._last_state = state.copy()
        self.history.append(state.copy())
        self.history = self.history[-2:]
        return FrameOutput(
            frame.timestamp,
            state,
            status,
            tr.Q,
            is_kf,
            track_ms,
            kf_ms,
            tr.tracked_count,
            tr.discard_uv,
        )

    def _bootstrap(self, frame: StereoFrame, status: str) -> FrameOutput:
        if frame.right is None and frame.depth is None:
            raise DegenerateKeyframeError(
                "bootstrap requires stereo or depth input"
            )
        t1 = time.perf_counter()
        state = self._last_state.copy()
        degenerate = False
        try:
            self.create_keyframe(frame, state, None, allow_degenerate=True)
        except DegenerateKeyframeError:
            degenerate = True
        kf_ms = (time.perf_counter() - t1) * 1e3
        self.history = [state.copy()]
        return FrameOutput(
            frame.timestamp,
            state,
            "degenerate" if degenerate else status,
            1.0 if not degenerate else 0.0,
            True,
            0.0,
            kf_ms,
        )

    def _reinitialize(self, frame: StereoFrame) -> FrameOutput:
        """Tracking lost: clear the window, drop the prior and bootstrap
        from the current frame at the last tracked pose."""
        self.window = SlidingWindow(self.rig, self.cfg.window.N, self.cfg.num_levels)
        self.history = []
        return self._bootstrap(frame, "reinit")
