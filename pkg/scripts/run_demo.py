#!/usr/bin/env python3
"""End-to-end demo: render a synthetic stereo sequence, run odometry on it,
and evaluate the estimated trajectory against ground truth.

Usage:
    python3 scripts/run_demo.py [--workdir DIR] [--frames N] [--motion SPEC]

Everything goes through the public CLI, so this doubles as a smoke test of
the installed entry point.
"""

import argparse
import sys
import tempfile
from pathlib import Path

from dsvo.cli import main as cli


def run(args):
    work = Path(args.workdir or tempfile.mkdtemp(prefix="dsvo_demo_"))
    data = work / "dataset"
    est = work / "est.txt"
    timing = work / "timing.csv"

    print(f"rendering {args.frames} frames ({args.motion}) into {data}")
    rc = cli(
        [
            "synth",
            "--scene", "plane",
            "--out", str(data),
            "--frames", str(args.frames),
            "--motion", args.motion,
        ]
    )
    if rc != 0:
        return rc

    print("running odometry")
    rc = cli(
        [
            "run",
            "--left", str(data / "left"),
            "--right", str(data / "right"),
            "--calib", str(data / "calib.txt"),
            "--times", str(data / "times.txt"),
            "--out", str(est),
            "--timing", str(timing),
        ]
    )
    if rc != 0:
        return rc

    print("evaluating against ground truth")
    rc = cli(
        ["eval", "--gt", str(data / "groundtruth.txt"), "--est", str(est)]
    )
    print(f"\nartifacts kept in {work}")
    print(timing.read_text())
    return rc


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", help="directory for dataset and outputs")
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--motion", default="orbit:4.58,0.25")
    sys.exit(run(ap.parse_args()))
