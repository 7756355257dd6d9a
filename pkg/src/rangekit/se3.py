"""Rigid transforms on SE(3) with twist (small-motion) updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPose

_EYE3 = np.eye(3)


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def rotation_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        # second-order series keeps the result orthonormal to machine precision
        K = _skew(omega)
        return _EYE3 + K + 0.5 * (K @ K)
    K = _skew(omega / theta)
    return _EYE3 + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: x_out = R @ x + t."""

    R: np.ndarray = field(default_factory=lambda: _EYE3.copy())
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    @staticmethod
    def exp(twist: np.ndarray) -> "RigidTransform":
        """se(3) exponential of ``twist = [omega, nu]`` (rotation first)."""
        twist = np.asarray(twist, dtype=float).reshape(6)
        omega, nu = twist[:3], twist[3:]
        R = rotation_exp(omega)
        theta = np.linalg.norm(omega)
        if theta < 1e-12:
            V = _EYE3 + 0.5 * _skew(omega)
        else:
            K = _skew(omega)
            V = (_EYE3
                 + (1.0 - np.cos(theta)) / theta**2 * K
                 + (theta - np.sin(theta)) / theta**3 * (K @ K))
        return RigidTransform(R, V @ nu)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other: (self @ other)(x) = self(other(x))."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        Rt = self.R.T
        return RigidTransform(Rt, -Rt @ self.t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack (..., 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.R.T + self.t

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    @staticmethod
    def from_matrix(M: np.ndarray) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return RigidTransform(M[:3, :3].copy(), M[:3, 3].copy())

    def orthonormality_defect(self) -> float:
        return float(np.linalg.norm(self.R.T @ self.R - _EYE3))

    def reorthonormalized(self) -> "RigidTransform":
        """Project R back onto SO(3) (nearest rotation in Frobenius norm)."""
        U, _, Vt = np.linalg.svd(self.R)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] = -U[:, -1]
            R = U @ Vt
        return RigidTransform(R, self.t)

    def validated(self, tol: float = 1e-6) -> "RigidTransform":
        """Raise InvalidPose unless R is a proper rotation within tol."""
        if not np.all(np.isfinite(self.R)) or not np.all(np.isfinite(self.t)):
            raise InvalidPose("non-finite pose entries")
        if self.orthonormality_defect() > tol or np.linalg.det(self.R) < 0:
            raise InvalidPose("rotation is not orthonormal with det +1")
        return self
