"""Analytic range-image renderer for plane / sphere / box scenes.

Rays reproduce the unprojection model exactly (receiver-cylinder origins
included), so rendered images round-trip through the projection model to
floating-point precision. This is the root oracle: it is validated only
against closed-form intersections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lidar_model import LidarIntrinsics
from .range_image import RangeImage
from .se3 import RigidTransform

_MIN_HIT = 1e-9


@dataclass(frozen=True)
class Plane:
    """Infinite plane {x : normal . x = offset}; the normal need not be unit."""

    normal: tuple[float, float, float]
    offset: float

    def implicit(self, pts: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=float)
        return (pts @ n - self.offset) / np.linalg.norm(n)

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=float)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.offset - origins @ n) / denom
        t[(np.abs(denom) < 1e-15) | (t <= _MIN_HIT)] = np.inf
        return t


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def implicit(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return np.linalg.norm(pts - c, axis=-1) - self.radius

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        oc = origins - c
        b = np.sum(oc * dirs, axis=-1)
        q = np.sum(oc * oc, axis=-1) - self.radius**2
        disc = b * b - q
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > _MIN_HIT, t0, t1)
        t = np.where(hit & (t > _MIN_HIT), t, np.inf)
        return t


@dataclass(frozen=True)
class Box:
    """Axis-aligned (optionally rotated) box given by center and full extents."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def implicit(self, pts: np.ndarray) -> np.ndarray:
        R = np.asarray(self.rotation, dtype=float)
        local = (pts - np.asarray(self.center, dtype=float)) @ R
        half = 0.5 * np.asarray(self.size, dtype=float)
        d = np.abs(local) - half
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        inside = np.minimum(np.max(d, axis=-1), 0.0)
        return outside + inside

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        R = np.asarray(self.rotation, dtype=float)
        half = 0.5 * np.asarray(self.size, dtype=float)
        o = (origins - np.asarray(self.center, dtype=float)) @ R
        d = dirs @ R
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            ta = (-half - o) * inv
            tb = (half - o) * inv
        # rays parallel to a slab: accept iff the origin lies inside that slab
        par = np.abs(d) < 1e-15
        lo = np.where(par, -np.inf, np.minimum(ta, tb))
        hi = np.where(par, np.inf, np.maximum(ta, tb))
        inside_slab = np.abs(o) <= half
        lo = np.where(par & ~inside_slab, np.inf, lo)
        t_near = np.max(lo, axis=-1)
        t_far = np.min(hi, axis=-1)
        t = np.where(t_near > _MIN_HIT, t_near, t_far)
        miss = (t_near > t_far) | (t <= _MIN_HIT)
        return np.where(miss, np.inf, t)


Primitive = Plane | Sphere | Box


def render_scene(scene: list[Primitive], intr: LidarIntrinsics,
                 pose: RigidTransform | None = None,
                 noise_std: float = 0.0, seed: int | None = None) -> RangeImage:
    """Cast the exact sensor ray of every pixel and keep the nearest positive hit.

    ``pose`` maps the sensor frame into the world frame the scene is defined
    in. Misses are invalid pixels. Optional seeded Gaussian noise perturbs the
    hit ranges (clamped at 0).
    """
    if not scene:
        raise ValueError("scene must contain at least one primitive")
    if pose is None:
        pose = RigidTransform.identity()
    H, W = intr.height, intr.width
    dirs = intr.ray_dirs.reshape(-1, 3) @ pose.R.T
    origins = np.broadcast_to(intr.ray_origins[None, :, :], (H, W, 3)).reshape(-1, 3)
    origins = origins @ pose.R.T + pose.t

    t = np.full(H * W, np.inf)
    for prim in scene:
        np.minimum(t, prim.raycast(origins, dirs), out=t)
    if noise_std > 0.0:
        rng = np.random.default_rng(seed)
        hit = np.isfinite(t)
        t[hit] = np.maximum(t[hit] + rng.normal(0.0, noise_std, int(hit.sum())), 0.0)
    t[~np.isfinite(t)] = 0.0
    return RangeImage(t.reshape(H, W).astype(np.float32), intr)
