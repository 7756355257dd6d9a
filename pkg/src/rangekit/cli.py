"""Command-line pipeline: convert, register, odometry, integrate, mesh, eval, synth."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import eval_metrics, io_formats
from .errors import RangekitError
from .lidar_model import synthetic_intrinsics
from .range_image import compute_normal_map, to_point_cloud
from .registration import (DEFAULT_SCHEDULE, RegistrationConfig,
                           initial_translation_by_centroids, timed_register)
from .sdf_volume import VoxelBlockGrid, integrate_cloud_frame
from .mesh_extract import extract_mesh
from .se3 import RigidTransform
from .synth import render_scene

PRESETS = {
    # kernel size doubles as the correspondence gate; clip bounds the cloud
    "outdoor": {"kernel": 0.5, "clip_max": 30.0, "voxel": 0.1},
    "indoor": {"kernel": 0.2, "clip_max": 10.0, "voxel": 0.04},
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RangekitError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    except OSError as e:
        print(json.dumps({"error": "OSError", "message": str(e)}), file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rangekit",
                                description="LiDAR range-image registration and reconstruction")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("RANGEKIT_THREADS", "4")),
                   help="cap on internal data-parallel workers")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="cloud (PLY) -> RIMG, or RIMG -> point PLY")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    _add_intrinsics_args(c)
    _add_preset(c)
    c.add_argument("--clip-min", type=float, default=0.0)
    c.add_argument("--clip-max", type=float, default=None)
    c.add_argument("--from-png-mm", action="store_true",
                   help="treat input as 16-bit grayscale PNG in millimeters")
    c.set_defaults(func=cmd_convert)

    r = sub.add_parser("register", help="align two range images, print the pose")
    r.add_argument("--src", required=True)
    r.add_argument("--dst", required=True)
    _add_intrinsics_args(r)
    _add_register_args(r)
    r.add_argument("--out", help="write the pose as a trajectory line")
    r.set_defaults(func=cmd_register)

    o = sub.add_parser("odometry", help="chain frame-to-frame registration over a directory")
    o.add_argument("--dir", required=True)
    o.add_argument("--out", required=True)
    _add_intrinsics_args(o)
    _add_register_args(o)
    o.set_defaults(func=cmd_odometry)

    i = sub.add_parser("integrate", help="fuse posed frames into a TSDF grid")
    i.add_argument("--dir", required=True)
    i.add_argument("--traj", required=True)
    i.add_argument("--out", required=True)
    _add_intrinsics_args(i)
    _add_preset(i)
    i.add_argument("--voxel", type=float, default=None)
    i.add_argument("--trunc-mult", type=float, default=4.0)
    i.add_argument("--max-weight", type=float, default=100.0)
    i.add_argument("--clip-min", type=float, default=0.0)
    i.add_argument("--clip-max", type=float, default=None)
    i.set_defaults(func=cmd_integrate)

    m = sub.add_parser("mesh", help="extract the zero-crossing mesh from a grid snapshot")
    m.add_argument("--grid", required=True)
    m.add_argument("--min-weight", type=float, default=1.0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mesh)

    er = sub.add_parser("eval-reg", help="registration error sweep over frame distances")
    er.add_argument("--dir", required=True)
    er.add_argument("--traj-gt", required=True)
    er.add_argument("--distances", default="1..6", help="e.g. 1..30 or 1,5,10")
    er.add_argument("--pairs", type=int, default=50)
    er.add_argument("--seed", type=int, default=0)
    er.add_argument("--out", required=True)
    _add_intrinsics_args(er)
    _add_register_args(er)
    er.set_defaults(func=cmd_eval_reg)

    ec = sub.add_parser("eval-recon", help="F-score of a reconstruction vs ground truth")
    src = ec.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh")
    src.add_argument("--cloud")
    ec.add_argument("--gt", required=True)
    ec.add_argument("--threshold-mult", type=float, default=3.0)
    ec.add_argument("--voxel", type=float, default=None)
    ec.add_argument("--f1", action="store_true",
                    help="also report the conventional 2PR/(P+R) F1")
    _add_preset(ec)
    ec.add_argument("--out", required=True)
    ec.set_defaults(func=cmd_eval_recon)

    s = sub.add_parser("synth", help="render oracle range-image sequences from a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--out", required=True)
    _add_intrinsics_args(s)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def _add_intrinsics_args(p) -> None:
    p.add_argument("--intrinsics", help="intrinsics JSON file")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--fov-min", type=float, default=None, help="radians")
    p.add_argument("--fov-max", type=float, default=None, help="radians")


def _add_preset(p) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="outdoor")


def _add_register_args(p) -> None:
    _add_preset(p)
    p.add_argument("--multi-scale", action="store_true")
    p.add_argument("--iters", type=int, default=50, help="single-scale iteration count")
    p.add_argument("--schedule", help="stride:iters list, e.g. 4:20,2:20,1:10")
    p.add_argument("--kernel", type=float, default=None,
                   help="pseudo-Huber scale and correspondence gate, meters")
    p.add_argument("--init", default="centroid", help="centroid | identity | file:PATH")
    p.add_argument("--normal-method", choices=["cross", "pca"], default="cross")


def _load_intrinsics(args):
    if args.intrinsics:
        return io_formats.read_intrinsics(args.intrinsics)
    if args.fov_min is None or args.fov_max is None:
        raise RangekitError("need --intrinsics or --fov-min/--fov-max with --height/--width")
    return synthetic_intrinsics(args.height, args.width, args.fov_min, args.fov_max)


def _registration_config(args) -> RegistrationConfig:
    kernel = args.kernel if args.kernel is not None else PRESETS[args.preset]["kernel"]
    if args.schedule:
        schedule = tuple(tuple(int(x) for x in part.split(":"))
                         for part in args.schedule.split(","))
    elif args.multi_scale:
        schedule = DEFAULT_SCHEDULE
    else:
        schedule = ((1, args.iters),)
    return RegistrationConfig(kernel_scale=kernel, max_correspondence_dist=kernel,
                              schedule=schedule, normal_method=args.normal_method)


def _initial_pose(args, src_img, dst_img) -> RigidTransform:
    if args.init == "identity":
        return RigidTransform.identity()
    if args.init == "centroid":
        return initial_translation_by_centroids(to_point_cloud(src_img),
                                                to_point_cloud(dst_img))
    if args.init.startswith("file:"):
        poses = io_formats.read_trajectory(args.init[5:])
        return poses[0][1]
    raise RangekitError(f"unknown --init {args.init!r}")


def _frame_paths(directory) -> list[Path]:
    paths = sorted(Path(directory).glob("*.rimg"))
    if not paths:
        raise RangekitError(f"no .rimg frames in {directory}")
    return paths


def _sequence_intrinsics(args, directory):
    local = Path(directory) / "intrinsics.json"
    if args.intrinsics is None and local.exists():
        return io_formats.read_intrinsics(local)
    return _load_intrinsics(args)


# ---------------------------------------------------------------- commands

def cmd_convert(args) -> int:
    inp, out = Path(args.input), Path(args.output)
    clip_max = args.clip_max if args.clip_max is not None else PRESETS[args.preset]["clip_max"]
    if inp.suffix == ".rimg":
        intr = _sequence_intrinsics(args, inp.parent)
        img = io_formats.read_range_image(inp, intr)
        io_formats.write_ply(out, to_point_cloud(img, args.clip_min, clip_max))
    elif args.from_png_mm or inp.suffix == ".png":
        intr = _load_intrinsics(args)
        img = io_formats.read_range_image_png(inp, intr)
        io_formats.write_range_image(out, img)
    else:
        from .range_image import from_point_cloud

        intr = _load_intrinsics(args)
        cloud = io_formats.read_ply(inp).vertices
        keep = np.linalg.norm(cloud, axis=1)
        cloud = cloud[(keep >= args.clip_min) & (keep <= clip_max)]
        img, stats = from_point_cloud(cloud, intr)
        io_formats.write_range_image(out, img)
        print(f"projected {stats.kept} pixels, {stats.collisions} collisions, "
              f"{stats.out_of_fov} out of fov")
    return 0


def cmd_register(args) -> int:
    intr = _load_intrinsics(args)
    src = io_formats.read_range_image(args.src, intr)
    dst = io_formats.read_range_image(args.dst, intr)
    config = _registration_config(args)
    res, ms = timed_register(src, dst, _initial_pose(args, src, dst), config)
    m = res.pose.matrix()[:3, :].reshape(-1)
    print(" ".join(f"{x:.9f}" for x in m))
    last = res.stats[-1] if res.stats else None
    print(f"converged={res.converged} iters={res.iterations} "
          f"corr={last.n_correspondences if last else 0} "
          f"rmse={last.inlier_rmse if last else float('nan'):.6f} time_ms={ms:.1f}")
    if args.out:
        io_formats.write_trajectory(args.out, [(0, res.pose)])
    return 0


def cmd_odometry(args) -> int:
    paths = _frame_paths(args.dir)
    intr = _sequence_intrinsics(args, args.dir)
    config = _registration_config(args)
    frames = [io_formats.read_range_image(p, intr) for p in paths]
    poses = [(0, RigidTransform.identity())]
    world = RigidTransform.identity()
    for k in range(1, len(frames)):
        src, dst = frames[k], frames[k - 1]
        init = (initial_translation_by_centroids(to_point_cloud(src), to_point_cloud(dst))
                if args.init == "centroid" else RigidTransform.identity())
        res, _ = timed_register(src, dst, init, config)
        world = world @ res.pose
        poses.append((k, world))
    io_formats.write_trajectory(args.out, poses)
    print(f"wrote {len(poses)} poses to {args.out}")
    return 0


def cmd_integrate(args) -> int:
    paths = _frame_paths(args.dir)
    intr = _sequence_intrinsics(args, args.dir)
    preset = PRESETS[args.preset]
    voxel = args.voxel if args.voxel is not None else preset["voxel"]
    clip_max = args.clip_max if args.clip_max is not None else preset["clip_max"]
    traj = dict(io_formats.read_trajectory(args.traj))
    grid = VoxelBlockGrid(voxel_size=voxel, truncation=args.trunc_mult * voxel,
                          max_weight=args.max_weight)
    for k, path in enumerate(paths):
        if k not in traj:
            raise RangekitError(f"trajectory has no pose for frame {k}")
        img = io_formats.read_range_image(path, intr)
        integrate_cloud_frame(grid, img, traj[k], clip_min=args.clip_min, clip_max=clip_max)
    io_formats.write_grid(args.out, grid)
    print(f"integrated {len(paths)} frames into {len(grid.blocks)} blocks -> {args.out}")
    return 0


def cmd_mesh(args) -> int:
    grid = io_formats.read_grid(args.grid)
    mesh = extract_mesh(grid, min_weight=args.min_weight)
    io_formats.write_ply(args.out, mesh)
    print(f"extracted {mesh.n_vertices} vertices, {mesh.n_triangles} triangles -> {args.out}")
    return 0


def cmd_eval_reg(args) -> int:
    paths = _frame_paths(args.dir)
    intr = _sequence_intrinsics(args, args.dir)
    gt = dict(io_formats.read_trajectory(args.traj_gt))
    config = _registration_config(args)
    frames = [io_formats.read_range_image(p, intr) for p in paths]
    normals = {}

    def run_pair(job):
        d, pair_idx, i, j = job
        src, dst = frames[j], frames[i]
        if i not in normals:
            normals[i] = compute_normal_map(dst, method=config.normal_method)
        init = (initial_translation_by_centroids(to_point_cloud(src), to_point_cloud(dst))
                if args.init == "centroid" else RigidTransform.identity())
        res, ms = timed_register(src, dst, init, config, dst_normals=normals[i])
        rel_gt = gt[i].inverse() @ gt[j]
        return (d, pair_idx,
                eval_metrics.rotation_error(res.pose.R, rel_gt.R),
                eval_metrics.translation_error(res.pose.t, rel_gt.t),
                int(res.converged), res.iterations, round(ms, 3))

    jobs = []
    for d in _parse_distances(args.distances):
        pairs = eval_metrics.sample_pairs(len(frames), d, args.pairs, seed=args.seed + d)
        jobs += [(d, k, i, j) for k, (i, j) in enumerate(pairs)]
    # normal maps are cached per destination; prime them serially first
    for d, k, i, j in jobs:
        if i not in normals:
            normals[i] = compute_normal_map(frames[i], method=config.normal_method)
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        rows = list(pool.map(run_pair, jobs))
    io_formats.write_registration_csv(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_eval_recon(args) -> int:
    voxel = args.voxel if args.voxel is not None else PRESETS[args.preset]["voxel"]
    threshold = args.threshold_mult * voxel
    src_path = args.mesh or args.cloud
    recon = io_formats.read_ply(src_path).vertices
    gt = io_formats.read_ply(args.gt).vertices
    p, r, f = eval_metrics.fscore(recon, gt, threshold, f1=args.f1)
    scene = Path(src_path).stem
    io_formats.write_reconstruction_csv(args.out, [(scene, p, r, f, threshold)])
    print(f"{scene}: precision={p:.4f} recall={r:.4f} fscore={f:.4f} "
          f"threshold={threshold:.3f} m")
    return 0


def cmd_synth(args) -> int:
    intr = _load_intrinsics(args)
    scene = io_formats.read_scene(args.scene)
    poses = io_formats.read_trajectory(args.poses)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io_formats.write_intrinsics(out / "intrinsics.json", intr)

    def render(item):
        k, (idx, pose) = item
        img = render_scene(scene, intr, pose, noise_std=args.noise,
                           seed=args.seed + idx if args.noise > 0 else None)
        io_formats.write_range_image(out / f"{idx:06d}.rimg", img)

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        list(pool.map(render, enumerate(poses)))
    print(f"rendered {len(poses)} frames into {out}")
    return 0


def _parse_distances(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in spec.split(",")]


if __name__ == "__main__":
    raise SystemExit(main())
