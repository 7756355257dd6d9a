"""Cylindrical spinning-LiDAR sensor model.

A scan is an H x W grid of ranges: row v selects a laser ray (elevation
table), column u the spin azimuth. The receiver sits on a cylinder of
radius r0 around the sensor axis, so a pixel unprojects to

    x = r cos(theta) cos(phi) + r0 cos(2 pi u / W)
    y = r sin(theta) cos(phi) + r0 sin(2 pi u / W)
    z = r sin(phi)

with theta(u, v) = 2 pi u / W + azimuth_lut[v] and phi(v) = elevation_lut[v].
Projection inverts this with a fixed-point iteration on the receiver offset
and an inverse elevation table for the row search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateRange, InvalidIntrinsics, OutOfFov

TWO_PI = 2.0 * np.pi

MODE_CALIBRATED = "calibrated"
MODE_SYNTHETIC = "synthetic"

# projection status codes returned by project_many
PROJ_OK = 0
PROJ_OUT_OF_FOV = 1
PROJ_DEGENERATE = 2


def round_half_up(x):
    """Round to nearest integer, halves away from the floor side (0.5 -> 1)."""
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def _elevation_of(z, r):
    # r == 0 happens only for degenerate points (masked by status); the
    # clamped ratio keeps them finite without a branch
    tiny = np.float32(1e-30) if np.asarray(r).dtype == np.float32 else 1e-300
    return np.arcsin(np.clip(z / np.maximum(r, tiny), -1.0, 1.0))


@dataclass(frozen=True)
class InverseElevationLut:
    """Uniformly binned elevation -> row table with a +/-1 refinement contract."""

    rows: np.ndarray          # (K,) int32, best row per bin
    phi_min: float
    phi_max: float

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    def lookup(self, phi) -> np.ndarray:
        """Nearest-bin row estimate (callers refine by checking +/-1 rows)."""
        phi = np.asarray(phi)
        scale = (self.size - 1) / (self.phi_max - self.phi_min)
        # clip in float, then truncate: equals round-half-up for values >= 0
        idx = np.clip((phi - self.phi_min) * scale + 0.5, 0, self.size - 1)
        return self.rows.take(idx.astype(np.int32))


def build_inverse_elevation_lut(elevation_lut: np.ndarray, factor: int = 2) -> InverseElevationLut:
    """Build the inverse row table with factor * H uniform bins over the LUT span.

    Each bin stores the row whose elevation is closest to the bin position
    (lowest row wins ties). With factor >= 2 and quasi-uniform ray spacing the
    raw lookup is within one row of the exhaustive argmin; the +/-1 neighbor
    refinement then recovers it exactly.
    """
    elevation_lut = np.asarray(elevation_lut, dtype=float)
    H = elevation_lut.shape[0]
    if H < 2:
        raise InvalidIntrinsics("elevation LUT needs at least 2 rows")
    if factor < 2:
        raise InvalidIntrinsics("inverse LUT factor must be >= 2")
    diffs = np.diff(elevation_lut)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise InvalidIntrinsics("elevation LUT must be strictly monotonic")
    phi_min = float(elevation_lut.min())
    phi_max = float(elevation_lut.max())
    K = factor * H
    bins = np.linspace(phi_min, phi_max, K)
    rows = np.argmin(np.abs(elevation_lut[None, :] - bins[:, None]), axis=1)
    return InverseElevationLut(rows.astype(np.int32), phi_min, phi_max)


@dataclass(frozen=True)
class LidarIntrinsics:
    """Immutable sensor description: grid size, receiver radius, per-row LUTs."""

    width: int
    height: int
    receiver_radius: float
    azimuth_lut: np.ndarray     # (H,) radians, per-row horizontal ray offset
    elevation_lut: np.ndarray   # (H,) radians, strictly monotonic
    mode: str = MODE_CALIBRATED
    inv_factor: int = 2

    def __post_init__(self):
        object.__setattr__(self, "azimuth_lut", np.asarray(self.azimuth_lut, dtype=float).reshape(-1))
        object.__setattr__(self, "elevation_lut", np.asarray(self.elevation_lut, dtype=float).reshape(-1))
        if self.width < 2 or self.height < 2:
            raise InvalidIntrinsics("width and height must be >= 2")
        if self.azimuth_lut.shape[0] != self.height or self.elevation_lut.shape[0] != self.height:
            raise InvalidIntrinsics("LUT lengths must equal the image height")
        if self.receiver_radius < 0:
            raise InvalidIntrinsics("receiver radius must be >= 0")
        if np.any(np.abs(self.azimuth_lut) >= np.pi):
            raise InvalidIntrinsics("azimuth offsets must lie in (-pi, pi)")
        if self.mode not in (MODE_CALIBRATED, MODE_SYNTHETIC):
            raise InvalidIntrinsics(f"unknown mode {self.mode!r}")
        if self.mode == MODE_SYNTHETIC:
            if self.receiver_radius != 0.0 or np.any(self.azimuth_lut != 0.0):
                raise InvalidIntrinsics("synthetic mode requires r0 = 0 and zero azimuth offsets")
        # validates monotonicity as a side effect
        object.__setattr__(self, "inv_elevation_lut",
                           build_inverse_elevation_lut(self.elevation_lut, self.inv_factor))

    inv_elevation_lut: InverseElevationLut = field(init=False, repr=False)

    @cached_property
    def fov_bounds(self) -> tuple[float, float]:
        """Accepted elevation interval: LUT span widened by half a ray spacing at each end."""
        lut = self.elevation_lut
        lo_end = 0 if lut[0] < lut[-1] else lut.shape[0] - 1
        hi_end = lut.shape[0] - 1 - lo_end
        gap_lo = abs(lut[lo_end] - lut[lo_end - 1 if lo_end else 1])
        gap_hi = abs(lut[hi_end] - lut[hi_end - 1 if hi_end else 1])
        return float(lut.min() - 0.5 * gap_lo), float(lut.max() + 0.5 * gap_hi)

    @cached_property
    def ray_dirs(self) -> np.ndarray:
        """(H, W, 3) unit ray directions for every pixel."""
        u = np.arange(self.width)
        alpha = TWO_PI * u / self.width
        theta = alpha[None, :] + self.azimuth_lut[:, None]
        phi = self.elevation_lut[:, None]
        cos_phi = np.cos(phi)
        return np.stack([
            np.cos(theta) * cos_phi,
            np.sin(theta) * cos_phi,
            np.broadcast_to(np.sin(phi), theta.shape),
        ], axis=-1)

    @cached_property
    def ray_origins(self) -> np.ndarray:
        """(W, 3) receiver positions on the r0 cylinder, one per column."""
        alpha = TWO_PI * np.arange(self.width) / self.width
        return np.stack([
            self.receiver_radius * np.cos(alpha),
            self.receiver_radius * np.sin(alpha),
            np.zeros(self.width),
        ], axis=-1)

    @cached_property
    def ray_tables_flat(self):
        """Contiguous per-component (H*W,) direction and (W,) origin columns."""
        dirs = tuple(np.ascontiguousarray(self.ray_dirs[..., c].reshape(-1))
                     for c in range(3))
        origins = tuple(np.ascontiguousarray(self.ray_origins[:, c]) for c in range(3))
        return dirs, origins

    @cached_property
    def ray_tables_flat_f32(self):
        dirs, origins = self.ray_tables_flat
        return (tuple(d.astype(np.float32) for d in dirs),
                tuple(o.astype(np.float32) for o in origins))

    @cached_property
    def _luts_f32(self):
        return (self.azimuth_lut.astype(np.float32),
                self.elevation_lut.astype(np.float32))

    def row_from_elevation(self, phi) -> np.ndarray:
        """Row minimizing |elevation_lut[v] - phi|: inverse-LUT estimate, refined +/-1.

        Ties go to the lowest row. Branch-free refinement (no stacked argmin);
        float32 inputs run the whole lookup in float32. Returns int32 rows.
        """
        phi = np.asarray(phi)
        lut = self._luts_f32[1] if phi.dtype == np.float32 else self.elevation_lut
        v0 = self.inv_elevation_lut.lookup(phi)
        vm = np.maximum(v0 - 1, np.int32(0))
        vp = np.minimum(v0 + 1, np.int32(self.height - 1))
        em = np.abs(lut.take(vm) - phi)
        e0 = np.abs(lut.take(v0) - phi)
        ep = np.abs(lut.take(vp) - phi)
        # first-minimum (lowest row) selection, branch-free; masked arithmetic
        # beats np.where by a wide margin on this path
        m01 = em <= e0
        m02 = em <= ep
        m12 = e0 <= ep
        sel_m = m01 & m02
        sel_p = (m01 & ~m02) | (~m01 & ~m12)
        return vm * sel_m + vp * sel_p + v0 * ~(sel_m | sel_p)


def synthetic_intrinsics(height: int, width: int, fov_min: float, fov_max: float) -> LidarIntrinsics:
    """Uniform-elevation fallback model for point clouds shipped without intrinsics.

    Row v gets the bin-center elevation fov_max - (v + 0.5) * (fov_max - fov_min) / H,
    so row 0 is the top of the field of view and rows decrease.
    """
    if not fov_min < fov_max:
        raise InvalidIntrinsics("fov_min must be < fov_max")
    if height < 2 or width < 2:
        raise InvalidIntrinsics("width and height must be >= 2")
    v = np.arange(height)
    elev = fov_max - (v + 0.5) * (fov_max - fov_min) / height
    return LidarIntrinsics(
        width=width,
        height=height,
        receiver_radius=0.0,
        azimuth_lut=np.zeros(height),
        elevation_lut=elev,
        mode=MODE_SYNTHETIC,
    )


@dataclass(frozen=True)
class PixelRay:
    """Projection result: real-valued column, integer row, range along the ray."""

    u: float
    v: int
    r: float


def unproject_many(u, v, r, intr: LidarIntrinsics) -> np.ndarray:
    """Vectorized unprojection of (u, v, r) arrays to (..., 3) sensor-frame points."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=np.int64)
    r = np.asarray(r, dtype=float)
    alpha = TWO_PI * u / intr.width
    theta = alpha + intr.azimuth_lut[v]
    phi = intr.elevation_lut[v]
    cos_phi = np.cos(phi)
    r0 = intr.receiver_radius
    return np.stack([
        r * np.cos(theta) * cos_phi + r0 * np.cos(alpha),
        r * np.sin(theta) * cos_phi + r0 * np.sin(alpha),
        r * np.sin(phi) + np.zeros_like(u),
    ], axis=-1)


def unproject(u: float, v: int, r: float, intr: LidarIntrinsics) -> np.ndarray:
    """Pixel (u, v) with range r to a 3D sensor-frame point."""
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError(f"pixel ({u}, {v}) outside {intr.height}x{intr.width} grid")
    if not (np.isfinite(r) and r >= 0):
        raise ValueError("range must be finite and >= 0")
    return unproject_many(u, v, r, intr)


def project_many(points: np.ndarray, intr: LidarIntrinsics,
                 max_iters: int = 3, tol: float = 1e-4, single: bool = False,
                 refine: bool = True):
    """Vectorized projection of (..., 3) points.

    Returns (u, v, r, status): real-valued wrapped columns, integer rows,
    ranges measured from the receiver, and a per-point status code
    (PROJ_OK / PROJ_OUT_OF_FOV / PROJ_DEGENERATE). u, v, r are undefined
    where status != PROJ_OK.

    single=True runs in float32 and replaces the receiver fixed-point loop
    with its closed-form limit: the iterated map's fixed point is the raw
    azimuth, so the converged compensation is (x, y) scaled by 1 - r0/|xy|.
    refine=False skips the final exact-receiver-angle pass (a sub-millirad
    column correction irrelevant to bulk voxel work).
    """
    dt = np.float32 if single else np.float64
    points = np.asarray(points, dtype=dt)
    az_lut = intr._luts_f32[0] if single else intr.azimuth_lut
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    r0 = dt(intr.receiver_radius)
    W = intr.width
    cols_per_rad = dt(W / TWO_PI)
    two_pi = dt(TWO_PI)

    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.arctan2(y, x)
        u_hat = (theta + two_pi * (theta < 0)) * cols_per_rad
        if r0 > 0.0:
            rho2 = x * x + y * y
            degenerate = rho2 + z * z <= r0 * r0
            if single:
                # closed-form convergence of the receiver iteration
                scale = 1.0 - r0 / np.sqrt(np.maximum(rho2, dt(1e-30)))
                xc = x * scale
                yc = y * scale
            else:
                xc, yc = x, y
                for _ in range(max_iters):
                    alpha = u_hat / cols_per_rad
                    xc = x - r0 * np.cos(alpha)
                    yc = y - r0 * np.sin(alpha)
                    theta = np.arctan2(yc, xc)
                    u_new = (theta + two_pi * (theta < 0)) * cols_per_rad
                    delta = np.abs(u_new - u_hat)
                    np.minimum(delta, W - delta, out=delta)
                    u_hat = u_new
                    if delta[~degenerate].size == 0 or np.max(delta[~degenerate]) < tol:
                        break
            r = np.sqrt(xc * xc + yc * yc + z * z)
        else:
            r = np.sqrt(x * x + y * y + z * z)
            degenerate = r <= 0.0
        phi = _elevation_of(z, r)
        v = intr.row_from_elevation(phi)
        # u_hat is already wrapped and the row offsets are < pi, so two masked
        # adds replace the (much slower) fmod
        u = u_hat - cols_per_rad * az_lut.take(v)
        u += W * (u < 0)
        u -= W * (u >= W)

        if r0 > 0.0 and refine:
            # the compensation above places the receiver at the azimuth, which
            # still carries the per-row offset; redo it once with the true
            # receiver angle 2*pi*u/W now that the row is known
            alpha = u / cols_per_rad
            xc = x - r0 * np.cos(alpha)
            yc = y - r0 * np.sin(alpha)
            r = np.sqrt(xc * xc + yc * yc + z * z)
            phi = _elevation_of(z, r)
            v = intr.row_from_elevation(phi)
            theta = np.arctan2(yc, xc)
            u = (theta + two_pi * (theta < 0)) * cols_per_rad - cols_per_rad * az_lut.take(v)
            u += W * (u < 0)
            u -= W * (u >= W)

    lo, hi = intr.fov_bounds
    out_of_fov = (phi < lo) | (phi > hi)

    status = np.zeros(points.shape[:-1], dtype=np.int8)
    status[out_of_fov] = PROJ_OUT_OF_FOV
    status[degenerate] = PROJ_DEGENERATE
    return u, v, r, status


def project(p: np.ndarray, intr: LidarIntrinsics,
            max_iters: int = 3, tol: float = 1e-4) -> PixelRay:
    """Project one 3D point; raises OutOfFov / DegenerateRange when undefined."""
    u, v, r, status = project_many(np.asarray(p, dtype=float).reshape(1, 3), intr,
                                   max_iters=max_iters, tol=tol)
    code = int(status[0])
    if code == PROJ_DEGENERATE:
        raise DegenerateRange("point lies on or inside the receiver cylinder")
    if code == PROJ_OUT_OF_FOV:
        raise OutOfFov("point elevation outside the sensor field of view")
    return PixelRay(u=float(u[0]), v=int(v[0]), r=float(r[0]))
