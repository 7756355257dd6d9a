#!/usr/bin/env python3
"""Full pipeline demo: render a synthetic sequence, run odometry, fuse a TSDF
grid, extract the mesh, and score it against the accumulated ground truth.

Example:
    python scripts/run_reconstruction_demo.py --out /tmp/recon --frames 80
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from rangekit import io_formats as io
from rangekit.cli import main as cli
from rangekit.range_image import to_point_cloud

sys.path.insert(0, str(Path(__file__).parent))
from run_registration_sweep import default_scene, loop_trajectory  # noqa: E402


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--frames", type=int, default=80)
    ap.add_argument("--voxel", type=float, default=0.1)
    ap.add_argument("--clip-max", type=float, default=12.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_scene(out / "scene.json", default_scene())
    io.write_trajectory(out / "gt.txt", loop_trajectory(args.frames, args.seed))

    steps = [
        ["synth", "--scene", str(out / "scene.json"), "--poses", str(out / "gt.txt"),
         "--out", str(out / "frames"), "--height", "64", "--width", "512",
         "--fov-min", "-0.275", "--fov-max", "0.284"],
        ["odometry", "--dir", str(out / "frames"), "--out", str(out / "odo.txt"),
         "--multi-scale"],
        ["integrate", "--dir", str(out / "frames"), "--traj", str(out / "odo.txt"),
         "--voxel", str(args.voxel), "--clip-max", str(args.clip_max),
         "--out", str(out / "grid.bin")],
        ["mesh", "--grid", str(out / "grid.bin"), "--out", str(out / "mesh.ply")],
    ]
    for step in steps:
        rc = cli(step)
        if rc:
            return rc

    intr = io.read_intrinsics(out / "frames" / "intrinsics.json")
    gt = dict(io.read_trajectory(out / "gt.txt"))
    clouds = [gt[k].apply(to_point_cloud(io.read_range_image(p, intr),
                                         clip_max=args.clip_max))
              for k, p in enumerate(sorted((out / "frames").glob("*.rimg")))]
    io.write_ply(out / "gt_cloud.ply", np.concatenate(clouds)[::5])
    return cli(["eval-recon", "--mesh", str(out / "mesh.ply"),
                "--gt", str(out / "gt_cloud.ply"), "--threshold-mult", "3",
                "--voxel", str(args.voxel), "--out", str(out / "recon.csv")])


if __name__ == "__main__":
    sys.exit(run())
