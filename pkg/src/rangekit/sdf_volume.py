"""Globally sparse, locally dense truncated signed-distance volume.

Voxels live in fixed 16^3 blocks keyed by integer block coordinates in a
hash map. Voxel i (per axis) is centered at (i + 0.5) * voxel_size; block b
owns voxel indices [16*b, 16*b + 16). Integration projects voxel centers
into a posed range image and folds the clamped range difference into a
running per-voxel average (voxel-parallel, no ray casting).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import lidar_model as lm
from .errors import InvalidPose
from .range_image import RangeImage
from .se3 import RigidTransform

BLOCK_EDGE = 16
BLOCK_VOXELS = BLOCK_EDGE ** 3

# local voxel offsets of one block, C order (z fastest), shape (4096, 3)
_LOCAL_OFFSETS = np.array(list(product(range(BLOCK_EDGE), repeat=3)), dtype=np.int64)


@dataclass
class VoxelBlock:
    tsdf: np.ndarray = field(default_factory=lambda: np.zeros((BLOCK_EDGE,) * 3, np.float32))
    weight: np.ndarray = field(default_factory=lambda: np.zeros((BLOCK_EDGE,) * 3, np.float32))


@dataclass
class VoxelBlockGrid:
    voxel_size: float
    truncation: float | None = None     # defaults to 4 * voxel_size
    max_weight: float = 100.0           # np.inf recovers the pure running mean
    integrate_free_space: bool = True   # update d > tau observations with +tau
    blocks: dict[tuple[int, int, int], VoxelBlock] = field(default_factory=dict)

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel size must be > 0")
        if self.truncation is None:
            self.truncation = 4.0 * self.voxel_size
        if self.truncation <= 0:
            raise ValueError("truncation must be > 0")

    @property
    def block_extent(self) -> float:
        return BLOCK_EDGE * self.voxel_size

    def block(self, key: tuple[int, int, int]) -> VoxelBlock:
        return self.blocks[key]

    def voxel_centers(self, key) -> np.ndarray:
        """(4096, 3) world-space centers of a block's voxels, C order."""
        base = np.asarray(key, dtype=np.int64) * BLOCK_EDGE
        return (base + _LOCAL_OFFSETS + 0.5) * self.voxel_size


# block keys fit +/-2^17 per axis; packed*8 (span coding) must stay in int64
_KEY_BIAS = 1 << 17
_KEY_SHIFT = 1 << 18


def _pack_keys(keys: np.ndarray) -> np.ndarray:
    k = keys + _KEY_BIAS
    return (k[:, 0] * _KEY_SHIFT + k[:, 1]) * _KEY_SHIFT + k[:, 2]


def _unpack_keys(packed: np.ndarray) -> np.ndarray:
    z = packed % _KEY_SHIFT
    rest = packed // _KEY_SHIFT
    y = rest % _KEY_SHIFT
    x = rest // _KEY_SHIFT
    return np.stack([x, y, z], axis=1) - _KEY_BIAS


def activate_blocks(points: np.ndarray, grid: VoxelBlockGrid, radius: float) -> set:
    """Insert (zeroed) every block intersecting a cube of half-width radius
    around each point; returns the full touched-key set for this frame."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if points.shape[0] == 0:
        return set()
    ext = grid.block_extent
    lo = np.floor((points - radius) / ext).astype(np.int64)
    hi = np.floor((points + radius) / ext).astype(np.int64)
    span = hi - lo
    if span.max() <= 1:
        # common case (radius < block extent): dedupe (lo, span-bits) first,
        # then expand each distinct code to its up-to-8 blocks
        code = _pack_keys(lo) * 8 + (span[:, 0] * 4 + span[:, 1] * 2 + span[:, 2])
        code = np.unique(code)
        lo = _unpack_keys(code // 8)
        span = np.stack([(code // 4) % 2, (code // 2) % 2, code % 2], axis=1)
    packed = []
    for off in product(range(int(span[:, 0].max()) + 1),
                       range(int(span[:, 1].max()) + 1),
                       range(int(span[:, 2].max()) + 1)):
        off = np.asarray(off)
        sel = np.all(off <= span, axis=1)
        packed.append(_pack_keys(lo[sel] + off))
    keys = _unpack_keys(np.unique(np.concatenate(packed)))
    touched = set(map(tuple, keys.tolist()))
    fresh = [key for key in touched if key not in grid.blocks]
    if fresh:
        store = np.zeros((len(fresh), 2, BLOCK_EDGE, BLOCK_EDGE, BLOCK_EDGE), np.float32)
        for j, key in enumerate(fresh):
            grid.blocks[key] = VoxelBlock(tsdf=store[j, 0], weight=store[j, 1])
    return touched


def integrate(grid: VoxelBlockGrid, img: RangeImage,
              pose_frame_to_world: RigidTransform, frame_keys,
              clip_min: float = 0.0, clip_max: float = np.inf,
              threads: int | None = None) -> int:
    """Fold one posed range image into the blocks activated for this frame.

    Per voxel center x (world): project the sensor-frame point, read the
    stored range, and update with d = range - r clamped to [-tau, tau];
    observations behind the surface beyond the truncation band are skipped.
    Voxel-parallel: chunks of whole blocks are processed independently (and
    concurrently; each voxel is written by exactly one task). Returns the
    number of voxels updated.
    """
    pose_frame_to_world.validated()
    if img.intrinsics is None:
        raise InvalidPose("range image must carry intrinsics for integration")
    intr = img.intrinsics
    inv = pose_frame_to_world.inverse()
    keys = sorted(frame_keys)
    if not keys:
        return 0
    if threads is None:
        threads = _default_threads()

    # ~600k-voxel chunks keep the working set cache-resident and give the
    # pool enough tasks to balance; larger chunks measure strictly slower
    chunk = max(1, 600_000 // BLOCK_VOXELS)
    parts = [keys[i0:i0 + chunk] for i0 in range(0, len(keys), chunk)]
    run = lambda part: _integrate_chunk(grid, img, intr, inv, part, clip_min, clip_max)
    if threads > 1 and len(parts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return sum(pool.map(run, parts))
    return sum(map(run, parts))


def _integrate_chunk(grid, img, intr, inv, part, clip_min, clip_max) -> int:
    tau = np.float32(grid.truncation)
    E = BLOCK_EDGE
    vs = grid.voxel_size
    # rotation is linear: rotate block origins and the shared offset grid
    # separately, then one broadcast add materializes the transformed centers
    base = (np.asarray(part, dtype=np.float64) * (E * vs)) @ inv.R.T + inv.t
    off_rot = (((_LOCAL_OFFSETS + 0.5) * vs) @ inv.R.T).astype(np.float32)
    local = (base.astype(np.float32)[:, None, :] + off_rot[None, :, :]).reshape(-1, 3)

    u, v, r, status = lm.project_many(local, intr, single=True, refine=False)
    up = (u + np.float32(0.5)).astype(np.int32)
    up[up == intr.width] = 0
    rng_px = img.data.take(v * np.int32(intr.width) + up)
    ok = status == lm.PROJ_OK
    ok &= (rng_px > 0) & (rng_px >= clip_min) & (rng_px <= clip_max)
    ok &= r <= clip_max
    d = rng_px - r
    ok &= d >= -tau
    if not grid.integrate_free_space:
        ok &= d <= tau
    np.minimum(d, tau, out=d)

    tsdf = np.stack([grid.blocks[k].tsdf.reshape(-1) for k in part]).reshape(-1)
    wt = np.stack([grid.blocks[k].weight.reshape(-1) for k in part]).reshape(-1)
    with np.errstate(invalid="ignore"):
        tsdf = np.where(ok, (wt * tsdf + d) / (wt + np.float32(1.0)), tsdf)
    wt = np.where(ok, np.minimum(wt + np.float32(1.0), np.float32(grid.max_weight)), wt)
    tsdf = tsdf.reshape(len(part), E, E, E)
    wt = wt.reshape(len(part), E, E, E)
    for j, key in enumerate(part):
        grid.blocks[key].tsdf = tsdf[j]
        grid.blocks[key].weight = wt[j]
    return int(np.count_nonzero(ok))


def _default_threads() -> int:
    import os

    env = os.environ.get("RANGEKIT_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def integrate_cloud_frame(grid: VoxelBlockGrid, img: RangeImage,
                          pose_frame_to_world: RigidTransform,
                          activation_radius: float | None = None,
                          clip_min: float = 0.0, clip_max: float = np.inf,
                          threads: int | None = None) -> int:
    """Convenience wrapper: activate blocks from the frame's clipped cloud, then integrate."""
    from .range_image import to_point_cloud

    radius = grid.truncation if activation_radius is None else activation_radius
    pts = to_point_cloud(img, clip_min=clip_min, clip_max=clip_max)
    keys = activate_blocks(pose_frame_to_world.apply(pts), grid, radius)
    return integrate(grid, img, pose_frame_to_world, keys,
                     clip_min=clip_min, clip_max=clip_max, threads=threads)


def query_sdf(grid: VoxelBlockGrid, x) -> tuple[float, float] | None:
    """Trilinear (sdf, weight) at x, or None while any enclosing voxel is unobserved."""
    sdf, wt, ok = query_sdf_many(grid, np.asarray(x, dtype=float).reshape(1, 3))
    if not ok[0]:
        return None
    return float(sdf[0]), float(wt[0])


def query_sdf_many(grid: VoxelBlockGrid, pts: np.ndarray):
    """Vectorized trilinear interpolation over the 8 enclosing voxel centers.

    Returns (sdf, weight, observed); entries with any unobserved corner have
    observed=False and undefined values.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    g = pts / grid.voxel_size - 0.5
    base = np.floor(g).astype(np.int64)
    frac = g - base

    sdf = np.zeros(n)
    wt = np.zeros(n)
    ok = np.ones(n, dtype=bool)
    for corner in product((0, 1), repeat=3):
        off = np.asarray(corner, dtype=np.int64)
        idx = base + off
        cw = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=1)
        d, w, found = _gather_voxels(grid, idx)
        ok &= found & (w > 0)
        sdf += cw * d
        wt += cw * w
    return sdf, wt, ok


def _gather_voxels(grid: VoxelBlockGrid, idx: np.ndarray):
    """Fetch (tsdf, weight, found) for global voxel indices (N, 3)."""
    bkey = np.floor_divide(idx, BLOCK_EDGE)
    local = idx - bkey * BLOCK_EDGE
    d = np.zeros(idx.shape[0], dtype=np.float32)
    w = np.zeros(idx.shape[0], dtype=np.float32)
    found = np.zeros(idx.shape[0], dtype=bool)
    # group lookups by block to keep the dict probing off the per-voxel path
    uniq, inverse = np.unique(bkey, axis=0, return_inverse=True)
    for bi, key in enumerate(map(tuple, uniq.tolist())):
        blk = grid.blocks.get(key)
        if blk is None:
            continue
        sel = inverse == bi
        li = local[sel]
        d[sel] = blk.tsdf[li[:, 0], li[:, 1], li[:, 2]]
        w[sel] = blk.weight[li[:, 0], li[:, 1], li[:, 2]]
        found[sel] = True
    return d, w, found
