import json

import numpy as np
import pytest

from rangekit import io_formats as io
from rangekit.cli import main
from rangekit.eval_metrics import rotation_error
from rangekit.range_image import to_point_cloud
from rangekit.se3 import RigidTransform


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory, room_scene):
    """Rendered 8-frame sequence with ground-truth trajectory."""
    root = tmp_path_factory.mktemp("pipeline")
    scene = root / "scene.json"
    io.write_scene(scene, room_scene)
    rng = np.random.default_rng(30)
    poses, pose = [], RigidTransform.identity()
    for i in range(8):
        poses.append((i, pose))
        step = np.concatenate([rng.uniform(-0.02, 0.02, 3),
                               [0.15, 0.05, 0.0] + rng.uniform(-0.02, 0.02, 3)])
        pose = pose @ RigidTransform.exp(step)
    gt = root / "gt.txt"
    io.write_trajectory(gt, poses)
    frames = root / "frames"
    rc = main(["synth", "--scene", str(scene), "--poses", str(gt),
               "--out", str(frames), "--height", "48", "--width", "384",
               "--fov-min", "-0.28", "--fov-max", "0.28"])
    assert rc == 0
    return root, scene, gt, frames


def test_synth_writes_frames_and_intrinsics(pipeline_dir):
    root, scene, gt, frames = pipeline_dir
    assert (frames / "intrinsics.json").exists()
    assert len(sorted(frames.glob("*.rimg"))) == 8


def test_convert_rimg_to_ply_and_back(pipeline_dir, tmp_path):
    root, scene, gt, frames = pipeline_dir
    ply = tmp_path / "cloud.ply"
    rc = main(["convert", "--input", str(frames / "000000.rimg"), "--output", str(ply),
               "--intrinsics", str(frames / "intrinsics.json")])
    assert rc == 0
    cloud = io.read_ply(ply).vertices
    img = io.read_range_image(frames / "000000.rimg",
                              io.read_intrinsics(frames / "intrinsics.json"))
    assert cloud.shape[0] == np.count_nonzero(
        img.valid_mask & (img.data <= 30.0))

    back = tmp_path / "back.rimg"
    rc = main(["convert", "--input", str(ply), "--output", str(back),
               "--intrinsics", str(frames / "intrinsics.json")])
    assert rc == 0
    img2 = io.read_range_image(back)
    overlap = img.valid_mask & img2.valid_mask
    assert np.allclose(img.data[overlap], img2.data[overlap], atol=1e-5)


def test_register_prints_pose_line(pipeline_dir, capsys, tmp_path):
    root, scene, gt, frames = pipeline_dir
    out = tmp_path / "pose.txt"
    rc = main(["register", "--src", str(frames / "000001.rimg"),
               "--dst", str(frames / "000000.rimg"),
               "--intrinsics", str(frames / "intrinsics.json"),
               "--multi-scale", "--out", str(out)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    vals = [float(x) for x in lines[0].split()]
    assert len(vals) == 12
    assert "converged=True" in lines[1]
    est = io.read_trajectory(out)[0][1]
    gt_poses = dict(io.read_trajectory(gt))
    rel = gt_poses[0].inverse() @ gt_poses[1]
    assert np.degrees(rotation_error(est.R, rel.R)) < 0.5
    assert np.linalg.norm(est.t - rel.t) < 0.05


def test_register_schedule_flag_equivalence(pipeline_dir, capsys):
    root, scene, gt, frames = pipeline_dir
    args = ["register", "--src", str(frames / "000001.rimg"),
            "--dst", str(frames / "000000.rimg"),
            "--intrinsics", str(frames / "intrinsics.json")]
    assert main(args + ["--schedule", "1:50"]) == 0
    out_a = capsys.readouterr().out.strip().splitlines()[0]
    assert main(args + ["--iters", "50"]) == 0
    out_b = capsys.readouterr().out.strip().splitlines()[0]
    assert out_a == out_b


def test_odometry_tracks_ground_truth(pipeline_dir, tmp_path):
    root, scene, gt, frames = pipeline_dir
    traj = tmp_path / "odo.txt"
    rc = main(["odometry", "--dir", str(frames), "--out", str(traj), "--multi-scale"])
    assert rc == 0
    est = dict(io.read_trajectory(traj))
    ref = dict(io.read_trajectory(gt))
    assert len(est) == len(ref)
    for k in range(len(ref)):
        err = rotation_error(est[k].R, ref[k].R)
        assert np.degrees(err) < 1.0
        assert np.linalg.norm(est[k].t - ref[k].t) < 0.08


def test_eval_reg_csv(pipeline_dir, tmp_path):
    root, scene, gt, frames = pipeline_dir
    out = tmp_path / "sweep.csv"
    rc = main(["eval-reg", "--dir", str(frames), "--traj-gt", str(gt),
               "--distances", "1,2", "--pairs", "3", "--seed", "7",
               "--out", str(out), "--multi-scale"])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == io.REGISTRATION_CSV_HEADER
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 6
    rot_errs = np.array([float(r[2]) for r in rows])
    assert np.degrees(np.median(rot_errs)) < 0.5
    assert all(r[4] == "1" for r in rows)


def test_integrate_mesh_eval_recon(pipeline_dir, tmp_path):
    root, scene, gt, frames = pipeline_dir
    grid_path = tmp_path / "grid.bin"
    rc = main(["integrate", "--dir", str(frames), "--traj", str(gt),
               "--voxel", "0.08", "--out", str(grid_path), "--clip-max", "8"])
    assert rc == 0
    mesh_path = tmp_path / "mesh.ply"
    rc = main(["mesh", "--grid", str(grid_path), "--out", str(mesh_path)])
    assert rc == 0
    mesh = io.read_ply(mesh_path)
    assert mesh.n_triangles > 1000

    # accumulated clipped GT cloud, as the evaluation reference
    intr = io.read_intrinsics(frames / "intrinsics.json")
    ref = dict(io.read_trajectory(gt))
    clouds = []
    for k, path in enumerate(sorted(frames.glob("*.rimg"))):
        img = io.read_range_image(path, intr)
        clouds.append(ref[k].apply(to_point_cloud(img, clip_max=8.0)))
    gt_ply = tmp_path / "gt.ply"
    io.write_ply(gt_ply, np.concatenate(clouds))

    out = tmp_path / "recon.csv"
    rc = main(["eval-recon", "--mesh", str(mesh_path), "--gt", str(gt_ply),
               "--threshold-mult", "3", "--voxel", "0.08", "--out", str(out)])
    assert rc == 0
    row = out.read_text().splitlines()[1].split(",")
    p, r, f = float(row[1]), float(row[2]), float(row[3])
    assert f > 0.49
    assert float(row[4]) == pytest.approx(0.24)


def test_missing_file_machine_readable_error(tmp_path, capsys):
    rc = main(["mesh", "--grid", str(tmp_path / "missing.bin"),
               "--out", str(tmp_path / "m.ply")])
    assert rc == 1
    err = capsys.readouterr().err.strip()
    doc = json.loads(err)
    assert doc["error"] == "OSError"


def test_bad_magic_machine_readable_error(tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"junkjunkjunk")
    rc = main(["mesh", "--grid", str(bad), "--out", str(tmp_path / "m.ply")])
    assert rc == 1
    doc = json.loads(capsys.readouterr().err.strip())
    assert doc["error"] == "FormatError"


def test_png_import_flag(tmp_path, synth_intr):
    from rangekit.range_image import RangeImage

    rng = np.random.default_rng(31)
    data = (rng.integers(0, 20000, (synth_intr.height, synth_intr.width)) / 1000.0)
    img = RangeImage(data.astype(np.float32), synth_intr)
    png = tmp_path / "scan.png"
    io.write_range_image_png(png, img)
    out = tmp_path / "scan.rimg"
    rc = main(["convert", "--input", str(png), "--output", str(out), "--from-png-mm",
               "--height", str(synth_intr.height), "--width", str(synth_intr.width),
               "--fov-min", "-0.3", "--fov-max", "0.3"])
    assert rc == 0
    back = io.read_range_image(out)
    assert np.allclose(back.data, img.data, atol=5.1e-4)
