"""Command line harness: run odometry, evaluate trajectories, render synthetic data."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ConfigError, OdometryConfig, load_config
from .dataset import Dataset, DatasetError, save_synthetic
from .synth import Scene, make_sequence, motion_path
from .trajectory import EvaluationError, Trajectory, evaluate
from .window import Odometry

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TRACKING = 2
EXIT_INTERNAL = 3


def _timing_rows(history):
    """Aggregate per-frame timings into (stage, count, mean, p50, p90, p99) rows."""
    rows = []
    for stage, values in (
        ("track", [h.track_ms for h in history if h.track_ms > 0]),
        ("kf", [h.kf_ms for h in history if h.is_keyframe]),
    ):
        if values:
            v = np.array(values)
            rows.append(
                (stage, len(v), v.mean(), *np.percentile(v, [50, 90, 99]))
            )
        else:
            rows.append((stage, 0, 0.0, 0.0, 0.0, 0.0))
    return rows


def cmd_run(args) -> int:
    cfg = OdometryConfig()
    if args.config:
        try:
            cfg = load_config(args.config, cfg)
        except ConfigError as e:
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_USAGE
    try:
        ds = Dataset(
            left_dir=args.left,
            right_dir=args.right,
            depth_dir=args.depth,
            calib_path=args.calib,
            timestamps_path=args.times,
            num_levels=cfg.num_levels,
        )
    except (DatasetError, OSError) as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_USAGE

    if ds.calib.baseline is None and args.depth is None:
        print("dataset error: need a stereo baseline or depth images", file=sys.stderr)
        return EXIT_USAGE
    rig = ds.calib.rig() if ds.calib.baseline is not None else None
    odom = Odometry(rig=rig, cfg=cfg, n_threads=args.threads)

    outputs = []
    for frame in ds:
        out = odom.process_frame(frame)
        outputs.append(out)
        if args.verbose:
            print(
                f"frame {out.timestamp:.3f} status={out.status} Q={out.Q:.3f} "
                f"tracked={out.tracked_count}",
                file=sys.stderr,
            )

    tracked = [o for o in outputs if o.status in ("tracking", "keyframe", "init")]
    traj = Trajectory.from_poses(
        [o.timestamp for o in outputs], [o.state.pose for o in outputs]
    )
    traj.write(args.out)

    if args.timing:
        with open(args.timing, "w") as f:
            f.write("stage,count,mean_ms,p50_ms,p90_ms,p99_ms\n")
            for row in _timing_rows(outputs):
                f.write(
                    "{},{},{:.3f},{:.3f},{:.3f},{:.3f}\n".format(*row)
                )

    frac = len(tracked) / len(outputs)
    print(f"tracked {len(tracked)}/{len(outputs)} frames ({100 * frac:.1f}%)")
    if frac < 0.8:
        return EXIT_TRACKING
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        gt = Trajectory.read(args.gt)
        est = Trajectory.read(args.est)
    except (OSError, ValueError) as e:
        print(f"trajectory error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = evaluate(
            est, gt, align=not args.no_align, with_scale=args.mono_scale
        )
    except EvaluationError as e:
        print(f"evaluation error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.json:
        print(report.to_json())
    else:
        print(f"length      {report.length_m:.3f} m")
        print(f"matched     {100 * report.matched_fraction:.1f}%")
        print(f"APE trans   {report.ape_trans_pct:.4f} %")
        print(f"APE rot     {report.ape_rot_deg:.4f} deg")
        print(f"RPE trans   {report.rpe_trans_pct:.4f} %")
        print(f"RPE rot     {report.rpe_rot_deg:.4f} deg")
        print(f"scale       {report.scale:.6f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .geometry import Pinhole, StereoRig

    try:
        scene = Scene.make(args.scene, depth=args.depth)
        poses = motion_path(args.motion, args.frames)
    except ValueError as e:
        print(f"synth error: {e}", file=sys.stderr)
        return EXIT_USAGE
    cam = Pinhole(420.0, 420.0, 319.5, 239.5, 640, 480)
    rig = StereoRig(cam, baseline=0.1)
    frames = make_sequence(
        scene,
        poses,
        rig,
        num_levels=1,
        noise=args.noise,
        with_depth=True,
        seed=args.seed,
    )
    timestamps = [f.timestamp for f in frames]
    save_synthetic(args.out, frames, rig, poses, timestamps)
    print(f"wrote {len(frames)} frames to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsvo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run odometry over an image-directory dataset")
    r.add_argument("--left", required=True)
    r.add_argument("--right")
    r.add_argument("--depth")
    r.add_argument("--calib", required=True)
    r.add_argument("--times", help="timestamp file, one per frame")
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.add_argument("--threads", type=int, default=1)
    r.add_argument(
        "--deterministic",
        action="store_true",
        help="force bit-deterministic reductions (always on in this build)",
    )
    r.add_argument("--timing", help="write per-stage timing CSV")
    r.add_argument("--verbose", action="store_true")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="compare an estimated trajectory to ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--est", required=True)
    e.add_argument("--no-align", action="store_true")
    e.add_argument(
        "--mono-scale",
        action="store_true",
        help="also estimate scale during alignment (mono runs)",
    )
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="render a synthetic dataset to disk")
    s.add_argument("--scene", choices=("plane", "ramp", "two-planes"), required=True)
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--motion", required=True, help="static | translate:vx,vy,vz | orbit:R,deg")
    s.add_argument("--out", required=True)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--depth", type=float, default=2.0, help="scene depth in meters")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except AssertionError as e:
        print(f"internal consistency error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
