"""Range image container, point-cloud conversion, normal maps, stride views.

Invalid pixels are stored as 0.0 (the "no return" hardware convention).
Columns are cyclic: column W-1 neighbors column 0 in every window operation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lidar_model as lm
from .errors import InvalidIntrinsics
from .lidar_model import LidarIntrinsics

INVALID_RANGE = 0.0

# neighbors whose range differs from the center by more than abs + rel * range
# are treated as a depth discontinuity and excluded from normal windows
DISCONTINUITY_ABS = 0.3
DISCONTINUITY_REL = 0.05


@dataclass
class RangeImage:
    """H x W float32 ranges in meters; 0.0 marks pixels with no return."""

    data: np.ndarray
    intrinsics: LidarIntrinsics | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("range image data must be 2D")
        if self.intrinsics is not None and self.data.shape != (self.intrinsics.height,
                                                               self.intrinsics.width):
            raise InvalidIntrinsics("image dimensions do not match intrinsics")
        if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
            raise ValueError("ranges must be finite and >= 0")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.data > INVALID_RANGE

    def strided(self, stride: int) -> "StridedView":
        return StridedView(self, stride)


@dataclass
class NormalImage:
    """Per-pixel unit normals aligned with a RangeImage; invalid where mask is False."""

    vectors: np.ndarray      # (H, W, 3) float32
    valid: np.ndarray        # (H, W) bool

    def strided(self, stride: int) -> "StridedView":
        return StridedView(self, stride)


@dataclass(frozen=True)
class StridedView:
    """Zero-copy decimated view: pixel (i, j) reads base pixel (s*i, s*j).

    Intrinsics are never rescaled; consumers project at the finest level and
    round to stride-aligned pixels. Mutating the base is visible through the
    view (numpy basic slicing).
    """

    base: RangeImage | NormalImage
    stride: int

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def shape(self) -> tuple[int, int]:
        h, w = self._base_hw()
        s = self.stride
        return (-(-h // s), -(-w // s))

    def _base_hw(self):
        if isinstance(self.base, RangeImage):
            return self.base.data.shape
        return self.base.valid.shape

    @property
    def ranges(self) -> np.ndarray:
        return self.base.data[::self.stride, ::self.stride]

    @property
    def vectors(self) -> np.ndarray:
        return self.base.vectors[::self.stride, ::self.stride]

    @property
    def valid(self) -> np.ndarray:
        if isinstance(self.base, RangeImage):
            return self.base.valid_mask[::self.stride, ::self.stride]
        return self.base.valid[::self.stride, ::self.stride]

    @property
    def base_rows(self) -> np.ndarray:
        return np.arange(0, self._base_hw()[0], self.stride)

    @property
    def base_cols(self) -> np.ndarray:
        return np.arange(0, self._base_hw()[1], self.stride)


@dataclass
class ProjectionStats:
    """Bookkeeping from from_point_cloud: what happened to each input point."""

    kept: int = 0
    collisions: int = 0
    out_of_fov: int = 0
    degenerate: int = 0


def unproject_image(img: RangeImage) -> np.ndarray:
    """(H, W, 3) sensor-frame points for every pixel (garbage where invalid)."""
    intr = _require_intrinsics(img)
    return (img.data.astype(float)[..., None] * intr.ray_dirs
            + intr.ray_origins[None, :, :])


def to_point_cloud(img: RangeImage, clip_min: float = 0.0,
                   clip_max: float = np.inf) -> np.ndarray:
    """One point per valid pixel with clip_min <= r <= clip_max, row-major order."""
    intr = _require_intrinsics(img)
    mask = img.valid_mask & (img.data >= clip_min) & (img.data <= clip_max)
    v, u = np.nonzero(mask)
    r = img.data[v, u].astype(float)
    return r[:, None] * intr.ray_dirs[v, u] + intr.ray_origins[u]


def points_at_stride(img: RangeImage, stride: int, clip_min: float = 0.0,
                     clip_max: float = np.inf) -> np.ndarray:
    """Point cloud of the stride-decimated pixel grid (registration source sets)."""
    view = img.strided(stride)
    intr = _require_intrinsics(img)
    rr = view.ranges
    mask = (rr > INVALID_RANGE) & (rr >= clip_min) & (rr <= clip_max)
    vi, ui = np.nonzero(mask)
    v = view.base_rows[vi]
    u = view.base_cols[ui]
    r = rr[vi, ui].astype(float)
    return _unproject_pixels(intr, v, u, r)


def _unproject_pixels(intr: LidarIntrinsics, v, u, r) -> np.ndarray:
    """Gather-cheap unprojection: per-component flat takes instead of pair indexing."""
    flat = v * intr.width + u
    dirs, origins = intr.ray_tables_flat
    out = np.empty((flat.shape[0], 3))
    for c in range(3):
        out[:, c] = r * dirs[c].take(flat) + origins[c].take(u)
    return out


def from_point_cloud(points: np.ndarray, intr: LidarIntrinsics,
                     max_iters: int = 3, tol: float = 1e-4):
    """Project a cloud into a fresh image; nearest range wins pixel collisions.

    Returns (RangeImage, ProjectionStats); out-of-view points are counted,
    collision losers are discarded (z-buffer rule).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    stats = ProjectionStats()
    H, W = intr.height, intr.width
    data = np.full(H * W, np.inf, dtype=np.float64)
    if points.shape[0]:
        u, v, r, status = lm.project_many(points, intr, max_iters=max_iters, tol=tol)
        ok = status == lm.PROJ_OK
        stats.out_of_fov = int(np.count_nonzero(status == lm.PROJ_OUT_OF_FOV))
        stats.degenerate = int(np.count_nonzero(status == lm.PROJ_DEGENERATE))
        ui = np.mod(lm.round_half_up(u[ok]), W)
        flat = v[ok] * W + ui
        np.minimum.at(data, flat, r[ok])
        n_in = int(np.count_nonzero(ok))
        n_pix = int(np.unique(flat).shape[0]) if n_in else 0
        stats.kept = n_pix
        stats.collisions = n_in - n_pix
    data[~np.isfinite(data)] = INVALID_RANGE
    return RangeImage(data.reshape(H, W).astype(np.float32), intr), stats


def compute_normal_map(img: RangeImage, method: str = "cross", radius: int = 2,
                       discontinuity_abs: float = DISCONTINUITY_ABS,
                       discontinuity_rel: float = DISCONTINUITY_REL) -> NormalImage:
    """Per-pixel sensor-facing unit normals.

    method "cross": normalize((p(u+1,v) - p(u,v)) x (p(u,v+1) - p(u,v))) with
    azimuth wrap in u; any invalid input pixel invalidates the normal.
    method "pca": smallest covariance eigenvector over the valid points of a
    (2*radius+1)^2 window, skipping neighbors across depth discontinuities;
    invalid with fewer than 3 contributing points.
    """
    if method == "cross":
        return _normals_cross(img)
    if method == "pca":
        return _normals_pca(img, radius, discontinuity_abs, discontinuity_rel)
    raise ValueError(f"unknown normal method {method!r}")


def _orient_toward_sensor(n: np.ndarray, p: np.ndarray) -> np.ndarray:
    flip = np.sum(n * p, axis=-1) > 0
    n[flip] = -n[flip]
    return n


def _normals_cross(img: RangeImage) -> NormalImage:
    pts = unproject_image(img)
    valid = img.valid_mask
    right = np.roll(pts, -1, axis=1)
    right_ok = np.roll(valid, -1, axis=1)
    down = np.empty_like(pts)
    down[:-1] = pts[1:]
    down[-1] = 0.0
    down_ok = np.zeros_like(valid)
    down_ok[:-1] = valid[1:]

    n = np.cross(right - pts, down - pts)
    ok = valid & right_ok & down_ok
    norm = np.linalg.norm(n, axis=-1)
    ok &= norm > 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        n /= norm[..., None]
    n = _orient_toward_sensor(n, pts)
    n[~ok] = 0.0
    return NormalImage(n.astype(np.float32), ok)


def _normals_pca(img: RangeImage, radius: int, disc_abs: float, disc_rel: float) -> NormalImage:
    pts = unproject_image(img)
    valid = img.valid_mask
    r = img.data.astype(float)
    H, W = r.shape

    count = np.zeros((H, W))
    s1 = np.zeros((H, W, 3))
    s2 = np.zeros((H, W, 3, 3))
    thresh = disc_abs + disc_rel * r
    for dv in range(-radius, radius + 1):
        for du in range(-radius, radius + 1):
            q = np.roll(pts, -du, axis=1)
            qv = np.roll(valid, -du, axis=1)
            qr = np.roll(r, -du, axis=1)
            if dv > 0:
                q = np.concatenate([q[dv:], np.zeros((dv, W, 3))], axis=0)
                qv = np.concatenate([qv[dv:], np.zeros((dv, W), bool)], axis=0)
                qr = np.concatenate([qr[dv:], np.zeros((dv, W))], axis=0)
            elif dv < 0:
                q = np.concatenate([np.zeros((-dv, W, 3)), q[:dv]], axis=0)
                qv = np.concatenate([np.zeros((-dv, W), bool), qv[:dv]], axis=0)
                qr = np.concatenate([np.zeros((-dv, W)), qr[:dv]], axis=0)
            use = valid & qv & (np.abs(qr - r) <= thresh)
            w = use.astype(float)
            count += w
            s1 += w[..., None] * q
            s2 += w[..., None, None] * (q[..., :, None] * q[..., None, :])

    ok = valid & (count >= 3)
    n = np.zeros((H, W, 3))
    if np.any(ok):
        c = count[ok][:, None]
        mean = s1[ok] / c
        cov = s2[ok] / c[..., None] - mean[:, :, None] * mean[:, None, :]
        # eigh is ascending: column 0 is the smallest-eigenvalue direction
        _, vecs = np.linalg.eigh(cov)
        n[ok] = vecs[:, :, 0]
    n = _orient_toward_sensor(n, pts)
    n[~ok] = 0.0
    return NormalImage(n.astype(np.float32), ok)


def _require_intrinsics(img: RangeImage) -> LidarIntrinsics:
    if img.intrinsics is None:
        raise InvalidIntrinsics("range image has no linked intrinsics")
    return img.intrinsics
