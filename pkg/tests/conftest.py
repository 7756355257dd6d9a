import numpy as np
import pytest

from rangekit import lidar_model as lm
from rangekit.se3 import RigidTransform
from rangekit.synth import Box, Plane, Sphere, render_scene


def nonuniform_elevation_lut(height: int, span_deg: float = 45.0, skew: float = 0.15,
                             top_deg: float | None = None) -> np.ndarray:
    """Decreasing, mildly non-uniform elevation table (spacing ratio < 1.5)."""
    t = np.linspace(0.0, 1.0, height)
    top = span_deg / 2 if top_deg is None else top_deg
    return np.deg2rad(top) - np.deg2rad(span_deg) * (t + skew * t * (1.0 - t))


@pytest.fixture(scope="session")
def calib_intrinsics() -> lm.LidarIntrinsics:
    rng = np.random.default_rng(7)
    H, W = 128, 1024
    return lm.LidarIntrinsics(width=W, height=H, receiver_radius=0.05,
                              azimuth_lut=rng.uniform(-0.01, 0.01, H),
                              elevation_lut=nonuniform_elevation_lut(H))


@pytest.fixture(scope="session")
def small_calib() -> lm.LidarIntrinsics:
    rng = np.random.default_rng(11)
    H, W = 32, 256
    return lm.LidarIntrinsics(width=W, height=H, receiver_radius=0.04,
                              azimuth_lut=rng.uniform(-0.008, 0.008, H),
                              elevation_lut=nonuniform_elevation_lut(H, span_deg=40.0))


@pytest.fixture(scope="session")
def synth_intr() -> lm.LidarIntrinsics:
    # span chosen so row 32 sits exactly at elevation 0
    return lm.synthetic_intrinsics(64, 512, np.deg2rad(-15.75), np.deg2rad(16.25))


@pytest.fixture(scope="session")
def room_scene() -> list:
    """Two walls, a floor, and a sphere: well-conditioned for registration."""
    return [
        Box(center=(6.0, 0.0, 1.0), size=(0.4, 16.0, 6.0)),
        Box(center=(0.0, 7.0, 1.0), size=(16.0, 0.4, 6.0)),
        Box(center=(-6.5, -1.0, 1.5), size=(0.4, 14.0, 6.0)),
        Box(center=(1.0, -7.5, 1.0), size=(14.0, 0.4, 6.0)),
        Plane(normal=(0.0, 0.0, 1.0), offset=-1.2),
        Sphere(center=(3.0, -2.0, 0.2), radius=1.2),
        Box(center=(-2.5, 3.5, -0.4), size=(1.6, 1.2, 1.6)),
    ]


@pytest.fixture(scope="session")
def wall_scene() -> list:
    return [Plane(normal=(1.0, 0.0, 0.0), offset=4.0)]


@pytest.fixture(scope="session")
def room_image(room_scene, synth_intr):
    return render_scene(room_scene, synth_intr)


def perturbation_pose(rng: np.random.Generator, rot_deg: float, trans_m: float) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    t = rng.normal(size=3)
    t *= trans_m / np.linalg.norm(t)
    return RigidTransform.exp(np.concatenate([axis * np.deg2rad(rot_deg), t]))


def integrate_sequence(frames, poses, order, max_weight=np.inf,
                       voxel=0.05, trunc=0.2, clip=4.6):
    from rangekit import sdf_volume as sdf

    grid = sdf.VoxelBlockGrid(voxel_size=voxel, truncation=trunc, max_weight=max_weight)
    for k in order:
        sdf.integrate_cloud_frame(grid, frames[k], poses[k], clip_max=clip)
    return grid


@pytest.fixture(scope="session")
def wall_setup(synth_intr):
    """Thick wall with its front face at x = 4.0, small known sensor motion."""
    scene = [Box(center=(4.5, 0.0, 0.0), size=(1.0, 12.0, 6.0))]
    rng = np.random.default_rng(20)
    poses = [RigidTransform.identity()]
    for _ in range(19):
        poses.append(RigidTransform.exp(np.concatenate([
            rng.uniform(-0.01, 0.01, 3), rng.uniform(-0.1, 0.1, 3)])))
    frames = [render_scene(scene, synth_intr, pose) for pose in poses]
    return frames, poses


@pytest.fixture(scope="session")
def wall_grid(wall_setup):
    frames, poses = wall_setup
    return integrate_sequence(frames, poses, range(len(frames)))
