"""Registration and reconstruction metrics, plus pair sampling for sweeps.

The F-score follows the ratio form F = P*R / (P + R), whose ceiling is 0.5
for perfect precision and recall; pass f1=True for the conventional
2*P*R / (P + R).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput


def rotation_error(R: np.ndarray, R_gt: np.ndarray) -> float:
    """Geodesic angle between two rotations: arccos((trace(R R_gt^T) - 1) / 2)."""
    R = np.asarray(R, dtype=float)
    R_gt = np.asarray(R_gt, dtype=float)
    c = (np.trace(R @ R_gt.T) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def translation_error(t: np.ndarray, t_gt: np.ndarray) -> float:
    """Euclidean distance between the two translation vectors, meters."""
    return float(np.linalg.norm(np.asarray(t, dtype=float) - np.asarray(t_gt, dtype=float)))


def fscore(recon: np.ndarray, gt: np.ndarray, threshold: float,
           f1: bool = False) -> tuple[float, float, float]:
    """(precision, recall, F) with threshold-bounded nearest-neighbor matching.

    precision: fraction of reconstructed points with a ground-truth point
    within threshold; recall the converse. Empty inputs yield (0, 0, 0).
    The k-d tree here is evaluation-only machinery, never on the
    registration path.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    recon = np.asarray(recon, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if recon.shape[0] == 0 or gt.shape[0] == 0:
        import warnings

        warnings.warn("fscore on empty point set; reporting zeros")
        return 0.0, 0.0, 0.0
    d_r, _ = cKDTree(gt).query(recon, k=1)
    d_g, _ = cKDTree(recon).query(gt, k=1)
    precision = float(np.count_nonzero(d_r <= threshold)) / recon.shape[0]
    recall = float(np.count_nonzero(d_g <= threshold)) / gt.shape[0]
    if precision + recall == 0.0:
        return precision, recall, 0.0
    num = 2.0 * precision * recall if f1 else precision * recall
    return precision, recall, num / (precision + recall)


def sample_pairs(n_frames: int, frame_distance: int, count: int,
                 seed: int | None = None) -> list[tuple[int, int]]:
    """count seeded (i, i + frame_distance) pairs, without replacement when possible."""
    if frame_distance < 1:
        raise ValueError("frame distance must be >= 1")
    n_valid = n_frames - frame_distance
    if n_valid < 1:
        raise EmptyInput(f"no frame pairs at distance {frame_distance} in {n_frames} frames")
    rng = np.random.default_rng(seed)
    if count >= n_valid:
        starts = np.arange(n_valid)
    else:
        starts = np.sort(rng.choice(n_valid, size=count, replace=False))
    return [(int(i), int(i + frame_distance)) for i in starts]
