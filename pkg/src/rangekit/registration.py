"""Projective point-to-plane registration, single- and multi-scale.

Correspondences come from projecting transformed source points into the
destination range image and reading the stored range back (no spatial search
structure anywhere on this path). A robust pseudo-Huber Gauss-Newton step
updates the pose with a left-multiplied twist.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lidar_model as lm
from .errors import DegenerateGeometry, EmptyInput, MissingNormals
from .range_image import NormalImage, RangeImage, compute_normal_map, points_at_stride
from .se3 import RigidTransform

DEFAULT_SCHEDULE = ((4, 20), (2, 20), (1, 10))
SINGLE_SCALE_SCHEDULE = ((1, 50),)

# streaming chunk for correspondence generation, sized to stay cache-resident
_CORR_CHUNK = 262_144


@dataclass(frozen=True)
class RegistrationConfig:
    kernel_scale: float = 0.5            # pseudo-Huber scale, meters
    max_correspondence_dist: float = 0.5  # gate on |transformed src - target|, meters
    schedule: tuple[tuple[int, int], ...] = DEFAULT_SCHEDULE
    rot_eps: float = 1e-4                # early-exit threshold on |twist rotation|, rad
    trans_eps: float = 1e-4              # early-exit threshold on |twist translation|, m
    clip_min: float = 0.0
    clip_max: float = np.inf
    normal_method: str = "cross"
    min_correspondences: int = 6
    # coarse pyramid levels multiply the gate and kernel by their stride so
    # they can capture large motion; the finest level always uses the
    # configured values, so single-scale behavior is unaffected
    scale_with_stride: bool = True
    # worker cap for the sharded correspondence + normal-equation reduction;
    # None reads RANGEKIT_THREADS / cpu count. Results are bitwise-stable for
    # a fixed shard count and agree with sequential mode to reassociation
    # error (< 1e-9 on the pose)
    threads: int | None = None

    def __post_init__(self):
        strides = [s for s, _ in self.schedule]
        if any(s < 1 for s in strides) or any(n < 1 for _, n in self.schedule):
            raise ValueError("strides and iteration counts must be >= 1")
        if list(strides) != sorted(strides, reverse=True):
            raise ValueError("schedule strides must be non-increasing (coarse to fine)")
        if self.kernel_scale <= 0:
            raise ValueError("kernel scale must be > 0")


@dataclass
class IterationStats:
    stride: int
    iteration: int
    n_correspondences: int
    cost: float
    inlier_rmse: float


@dataclass
class RegistrationResult:
    pose: RigidTransform
    stats: list[IterationStats] = field(default_factory=list)
    converged: bool = True

    @property
    def iterations(self) -> int:
        return len(self.stats)


@dataclass
class CorrespondenceSet:
    """Matched (source point, target point, target normal) triples.

    source points are in the source frame; residuals are evaluated against
    the pose under test, so the same set supports derivative checks.
    """

    source: np.ndarray   # (N, 3)
    target: np.ndarray   # (N, 3)
    normal: np.ndarray   # (N, 3)

    def __len__(self) -> int:
        return self.source.shape[0]


def initial_translation_by_centroids(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Identity rotation, translation aligning the two point-set centroids."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape[0] == 0 or dst.shape[0] == 0:
        raise EmptyInput("centroid alignment needs non-empty point sets")
    return RigidTransform(t=dst.mean(axis=0) - src.mean(axis=0))


def robust_weight(residual, k: float):
    """IRLS weight of the pseudo-Huber kernel: rho'(e)/e = 1/sqrt(1 + (e/k)^2)."""
    e = np.asarray(residual, dtype=float)
    return 1.0 / np.sqrt(1.0 + (e / k) ** 2)


def pseudo_huber(residual, k: float):
    """rho(e) = k^2 (sqrt(1 + (e/k)^2) - 1); quadratic near 0, linear in the tails."""
    e = np.asarray(residual, dtype=float)
    return k * k * (np.sqrt(1.0 + (e / k) ** 2) - 1.0)


def projective_correspondences(src_points: np.ndarray, dst_img: RangeImage,
                               dst_normals: NormalImage, pose: RigidTransform,
                               max_dist: float, stride: int = 1,
                               single: bool = False) -> CorrespondenceSet:
    """Associate source points with destination pixels by projection.

    Each transformed point is projected at full resolution, rounded to the
    nearest stride-aligned pixel, and matched with the unprojection of that
    pixel's stored range. Pairs farther apart than max_dist are rejected.
    Rows falling off the image are dropped; columns wrap. single=True runs
    the projection arithmetic in float32 (the bulk registration path).
    """
    if dst_normals is None:
        raise MissingNormals("destination normal map is required")
    src_points = np.asarray(src_points, dtype=float).reshape(-1, 3)
    n = src_points.shape[0]
    if n > _CORR_CHUNK:
        # stream big clouds in cache-resident chunks; per-point cost stays
        # flat instead of bending once the working set spills L3
        parts = [projective_correspondences(src_points[a:a + _CORR_CHUNK], dst_img,
                                            dst_normals, pose, max_dist, stride,
                                            single)
                 for a in range(0, n, _CORR_CHUNK)]
        return CorrespondenceSet(
            source=np.concatenate([p.source for p in parts]),
            target=np.concatenate([p.target for p in parts]),
            normal=np.concatenate([p.normal for p in parts]))

    intr = dst_img.intrinsics
    moved = src_points @ pose.R.T + pose.t
    dt = np.float32 if single else np.float64

    # the precision refinement moves columns well under a pixel, which the
    # stride rounding erases; skip it on the bulk path
    u, v, _, status = lm.project_many(moved.astype(dt) if single else moved,
                                      intr, single=single, refine=not single)
    ok = status == lm.PROJ_OK
    inv_s = dt(1.0 / stride)
    up = (u * inv_s + dt(0.5)).astype(np.int32) * stride
    up[up >= intr.width] = 0
    vp = (v.astype(dt) * inv_s + dt(0.5)).astype(np.int32) * stride
    ok &= (vp >= 0) & (vp < intr.height)
    np.clip(vp, 0, intr.height - 1, out=vp)

    flat = vp * np.int32(intr.width) + up
    rng_px = dst_img.data.take(flat)
    ok &= (rng_px > 0) & dst_normals.valid.take(flat)

    sel = np.nonzero(ok)[0]
    fq = flat[sel]
    uq = up[sel]
    dirs, origins = intr.ray_tables_flat_f32 if single else intr.ray_tables_flat
    rq = rng_px[sel] if single else rng_px[sel].astype(np.float64)
    msel = moved[sel].astype(dt)
    target = np.empty((sel.shape[0], 3), dtype=dt)
    d2 = np.zeros(sel.shape[0], dtype=dt)
    for c in range(3):
        target[:, c] = rq * dirs[c].take(fq) + origins[c].take(uq)
        diff = msel[:, c] - target[:, c]
        d2 += diff * diff
    keep = d2 <= dt(max_dist) * dt(max_dist)

    nrm_flat = dst_normals.vectors.reshape(-1, 3)
    fk = fq[keep]
    normal = np.empty((fk.shape[0], 3), dtype=dt)
    for c in range(3):
        normal[:, c] = nrm_flat[:, c].take(fk)

    return CorrespondenceSet(source=src_points[sel[keep]],
                             target=target[keep] if single else target[keep].astype(np.float64),
                             normal=normal)


def point_to_plane_residuals(corr: CorrespondenceSet, pose: RigidTransform) -> np.ndarray:
    moved = corr.source @ pose.R.T + pose.t
    return np.sum(corr.normal * (moved - corr.target), axis=1)


def gauss_newton_step(corr: CorrespondenceSet, pose: RigidTransform,
                      kernel_scale: float):
    """One robust Gauss-Newton step; returns (twist, robust cost at the input pose).

    Residual r_i = n_i . ((R p_i + t) - q_i); the Jacobian row under a
    left-multiplied twist [omega, nu] is [ (R p_i + t) x n_i ; n_i ]. Weights
    are the pseudo-Huber IRLS weights. The 6x6 normal equations accumulate as
    one associative reduction over correspondences.
    """
    xi, cost, _ = _gauss_newton_solve(corr, pose, kernel_scale)
    return xi, cost


def _gauss_newton_solve(corr: CorrespondenceSet, pose: RigidTransform,
                        kernel_scale: float):
    n = len(corr)
    if n < 6:
        raise DegenerateGeometry(f"need at least 6 correspondences, got {n}")
    moved = corr.source @ pose.R.T + pose.t
    nrm = corr.normal
    r = np.einsum("ij,ij->i", nrm, moved - corr.target)
    J = np.empty((n, 6))
    mx, my, mz = moved[:, 0], moved[:, 1], moved[:, 2]
    nx, ny, nz = nrm[:, 0], nrm[:, 1], nrm[:, 2]
    J[:, 0] = my * nz - mz * ny
    J[:, 1] = mz * nx - mx * nz
    J[:, 2] = mx * ny - my * nx
    J[:, 3:] = nrm
    w = robust_weight(r, kernel_scale)

    Jw = J * w[:, None]
    H = Jw.T @ J
    b = -(r * w) @ J
    if np.linalg.cond(H) > 1e12:
        raise DegenerateGeometry("normal equations are ill-conditioned (rank-deficient geometry)")
    xi = np.linalg.solve(H, b)
    # pseudo-Huber value via the weight already computed: rho = k^2 (1/w - 1)
    cost = float(kernel_scale**2 * np.sum(1.0 / w - 1.0))
    rmse = float(np.sqrt(np.mean(r * r)))
    return xi, cost, rmse


def register(src_img: RangeImage, dst_img: RangeImage,
             init: RigidTransform | None = None,
             config: RegistrationConfig = RegistrationConfig(),
             dst_normals: NormalImage | None = None) -> RegistrationResult:
    """Align src to dst over the coarse-to-fine stride schedule.

    Returns the pose mapping the src frame into the dst frame. Normals are
    estimated once on dst at full resolution (pass dst_normals to reuse).
    converged=False flags a run abandoned for lack of correspondences.
    """
    pose = RigidTransform.identity() if init is None else init
    if dst_normals is None:
        dst_normals = compute_normal_map(dst_img, method=config.normal_method)
    result = RegistrationResult(pose=pose)
    threads = config.threads if config.threads is not None else _default_threads()

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for stride, iters in config.schedule:
            level = float(stride) if config.scale_with_stride else 1.0
            gate = config.max_correspondence_dist * level
            kernel = config.kernel_scale * level
            src_pts = points_at_stride(src_img, stride, config.clip_min, config.clip_max)
            shards = _shard_bounds(src_pts.shape[0], threads if pool else 1)
            for it in range(iters):
                out = _accumulate_normal_equations(
                    src_pts, shards, dst_img, dst_normals, pose, gate, stride,
                    kernel, pool)
                n_corr, H, b, cost, sumsq = out
                if n_corr < config.min_correspondences:
                    result.pose = pose
                    result.converged = False
                    return result
                if np.linalg.cond(H) > 1e12:
                    raise DegenerateGeometry(
                        "normal equations are ill-conditioned (rank-deficient geometry)")
                xi = np.linalg.solve(H, b)
                pose = (RigidTransform.exp(xi) @ pose)
                if pose.orthonormality_defect() > 1e-12:
                    pose = pose.reorthonormalized()
                result.stats.append(IterationStats(
                    stride=stride, iteration=it, n_correspondences=n_corr,
                    cost=cost, inlier_rmse=float(np.sqrt(sumsq / n_corr))))
                if (np.linalg.norm(xi[:3]) < config.rot_eps
                        and np.linalg.norm(xi[3:]) < config.trans_eps):
                    break
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    result.pose = pose
    result.converged = True
    return result


def _shard_bounds(n: int, shards: int) -> list[tuple[int, int]]:
    if shards <= 1 or n < 40_000:
        return [(0, n)]
    edges = np.linspace(0, n, shards + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _accumulate_normal_equations(src_pts, shards, dst_img, dst_normals, pose,
                                 gate, stride, kernel, pool):
    """Associative reduction of the weighted 6x6 system over point shards.

    Shard boundaries and the merge order are fixed, so a given shard count is
    bitwise-reproducible; different shard counts agree to reassociation error.
    """

    def run(bounds):
        a, b = bounds
        corr = projective_correspondences(src_pts[a:b], dst_img, dst_normals,
                                          pose, gate, stride, single=True)
        return _partial_normal_equations(corr, pose, kernel)

    parts = list(pool.map(run, shards)) if pool is not None and len(shards) > 1 \
        else [run(s) for s in shards]
    n = sum(p[0] for p in parts)
    H = np.zeros((6, 6))
    b = np.zeros(6)
    cost = 0.0
    sumsq = 0.0
    for ni, Hi, bi, ci, si in parts:
        if ni:
            H += Hi
            b += bi
            cost += ci
            sumsq += si
    return n, H, b, cost, sumsq


def _partial_normal_equations(corr: CorrespondenceSet, pose: RigidTransform,
                              kernel_scale: float):
    """Shard contribution in float32; the 6x6 merge and solve stay float64.

    BLAS blocked accumulation keeps the float32 sums near pairwise accuracy,
    well inside the documented 1e-9 pose agreement contract.
    """
    n = len(corr)
    if n == 0:
        return 0, None, None, 0.0, 0.0
    moved = (corr.source @ pose.R.T + pose.t).astype(np.float32)
    nrm = np.asarray(corr.normal, dtype=np.float32)
    tgt = np.asarray(corr.target, dtype=np.float32)
    r = np.einsum("ij,ij->i", nrm, moved - tgt)
    J = np.empty((n, 6), np.float32)
    mx, my, mz = moved[:, 0], moved[:, 1], moved[:, 2]
    nx, ny, nz = nrm[:, 0], nrm[:, 1], nrm[:, 2]
    J[:, 0] = my * nz - mz * ny
    J[:, 1] = mz * nx - mx * nz
    J[:, 2] = mx * ny - my * nx
    J[:, 3:] = nrm
    w = robust_weight32(r, np.float32(kernel_scale))
    H = (J * w[:, None]).T @ J
    b = -(r * w) @ J
    cost = float(kernel_scale**2 * np.sum(1.0 / w - 1.0, dtype=np.float64))
    return n, H.astype(np.float64), b.astype(np.float64), cost, float(r @ r)


def robust_weight32(e: np.ndarray, k: np.float32) -> np.ndarray:
    return 1.0 / np.sqrt(np.float32(1.0) + (e / k) ** 2)


def _default_threads() -> int:
    import os

    env = os.environ.get("RANGEKIT_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def timed_register(*args, **kwargs):
    """register() plus wall-clock milliseconds, for evaluation sweeps."""
    t0 = time.perf_counter()
    res = register(*args, **kwargs)
    return res, (time.perf_counter() - t0) * 1e3
