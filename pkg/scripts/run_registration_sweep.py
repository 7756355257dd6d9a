#!/usr/bin/env python3
"""Render an oracle sequence, run the frame-distance registration sweep,
and summarize the error distributions.

Example:
    python scripts/run_registration_sweep.py --out /tmp/sweep --frames 60 \
        --distances 1..6 --pairs 20
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from rangekit import io_formats as io
from rangekit.cli import main as cli
from rangekit.se3 import RigidTransform
from rangekit.synth import Box, Plane, Sphere


def default_scene():
    return [
        Box(center=(6.0, 0.0, 1.0), size=(0.4, 16.0, 6.0)),
        Box(center=(0.0, 7.0, 1.0), size=(16.0, 0.4, 6.0)),
        Box(center=(-6.5, -1.0, 1.5), size=(0.4, 14.0, 6.0)),
        Box(center=(1.0, -7.5, 1.0), size=(14.0, 0.4, 6.0)),
        Plane(normal=(0.0, 0.0, 1.0), offset=-1.2),
        Sphere(center=(3.0, -2.0, 0.2), radius=1.2),
        Box(center=(-2.5, 3.5, -0.4), size=(1.6, 1.2, 1.6)),
    ]


def loop_trajectory(n, seed=0):
    rng = np.random.default_rng(seed)
    poses, pose = [], RigidTransform.identity()
    for i in range(n):
        poses.append((i, pose))
        step = np.concatenate([[0.0, 0.0, 2 * np.pi / n] + rng.uniform(-0.002, 0.002, 3),
                               [0.08, 0.0, 0.0] + rng.uniform(-0.008, 0.008, 3)])
        pose = pose @ RigidTransform.exp(step)
    return poses


def summarize(csv_path):
    rows = [line.split(",") for line in Path(csv_path).read_text().splitlines()[1:]]
    by_d = {}
    for r in rows:
        by_d.setdefault(int(r[0]), []).append((float(r[2]), float(r[3])))
    print(f"{'dist':>4} {'rot med (deg)':>14} {'rot q3':>8} {'trans med (m)':>14} {'trans q3':>9}")
    for d in sorted(by_d):
        rot = np.degrees([x[0] for x in by_d[d]])
        tr = np.array([x[1] for x in by_d[d]])
        print(f"{d:>4} {np.median(rot):>14.4f} {np.quantile(rot, 0.75):>8.4f} "
              f"{np.median(tr):>14.4f} {np.quantile(tr, 0.75):>9.4f}")


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="working directory")
    ap.add_argument("--frames", type=int, default=60)
    ap.add_argument("--distances", default="1..6")
    ap.add_argument("--pairs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--single-scale", action="store_true")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_scene(out / "scene.json", default_scene())
    io.write_trajectory(out / "gt.txt", loop_trajectory(args.frames, args.seed))

    rc = cli(["synth", "--scene", str(out / "scene.json"), "--poses", str(out / "gt.txt"),
              "--out", str(out / "frames"), "--height", "64", "--width", "512",
              "--fov-min", "-0.275", "--fov-max", "0.284"])
    if rc:
        return rc
    sweep_args = ["eval-reg", "--dir", str(out / "frames"), "--traj-gt", str(out / "gt.txt"),
                  "--distances", args.distances, "--pairs", str(args.pairs),
                  "--seed", str(args.seed), "--out", str(out / "sweep.csv")]
    if not args.single_scale:
        sweep_args.append("--multi-scale")
    rc = cli(sweep_args)
    if rc:
        return rc
    summarize(out / "sweep.csv")
    return 0


if __name__ == "__main__":
    sys.exit(run())
