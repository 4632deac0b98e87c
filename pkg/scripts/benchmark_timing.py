#!/usr/bin/env python3
"""Per-stage timing benchmark on an in-memory synthetic sequence.

Reports mean/median latency of the tracking and keyframe stages at VGA
resolution for several worker-thread counts.

Usage:
    python3 scripts/benchmark_timing.py [--frames N] [--threads 1,2,4]
"""

import argparse

import numpy as np

from dsvo.config import OdometryConfig
from dsvo.geometry import Pinhole, StereoRig
from dsvo.synth import Scene, make_sequence, motion_path
from dsvo.window import Odometry

CAM = Pinhole(420.0, 420.0, 319.5, 239.5, 640, 480)
RIG = StereoRig(CAM, 0.1)


def bench(frames, n_threads):
    odo = Odometry(RIG, OdometryConfig(), n_threads=n_threads)
    track_ms, kf_ms = [], []
    for f in frames:
        out = odo.process_frame(f)
        if out.track_ms > 0:
            track_ms.append(out.track_ms)
        if out.kf_ms > 0:
            kf_ms.append(out.kf_ms)
    return track_ms, kf_ms


def stats(xs):
    if not xs:
        return "n/a"
    return f"mean {np.mean(xs):6.1f} ms  p50 {np.median(xs):6.1f} ms  n={len(xs)}"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=40)
    ap.add_argument("--threads", default="1,2,4")
    args = ap.parse_args()

    poses = motion_path("orbit:2.86,0.5", args.frames)
    print(f"rendering {args.frames} stereo frames at 640x480 ...")
    frames = make_sequence(Scene.make("plane", depth=2.0), poses, RIG, num_levels=5)

    base_kf = None
    for t in (int(x) for x in args.threads.split(",")):
        track_ms, kf_ms = bench(frames, t)
        line = f"threads={t}  track: {stats(track_ms)}   kf: {stats(kf_ms)}"
        if kf_ms:
            if base_kf is None:
                base_kf = np.mean(kf_ms)
            else:
                line += f"   kf speedup {base_kf / np.mean(kf_ms):.2f}x"
        print(line)


if __name__ == "__main__":
    main()
