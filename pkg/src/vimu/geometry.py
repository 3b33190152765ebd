"""Rotation and rigid-transform helpers.

Rotations are plain ``(3, 3)`` float arrays; vectors are ``(3,)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

# below this angle exp/log switch to Taylor expansions
SMALL_ANGLE = 1e-7


def skew(v: ArrayLike) -> NDArray[np.float64]:
    """Skew-symmetric matrix such that ``skew(v) @ u == np.cross(v, u)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -z, y],
            [z, 0.0, -x],
            [-y, x, 0.0],
        ]
    )


def so3_exp(phi: ArrayLike) -> NDArray[np.float64]:
    """
    Rotation matrix for the rotation vector ``phi`` (Rodrigues formula).

    Parameters
    ----------
    phi: array-like
        Rotation vector (axis times angle) in radians.

    Returns
    -------
    R: ndarray, shape (3, 3)
        Rotation matrix.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = 2.0 * np.sin(0.5 * theta) ** 2 / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: ArrayLike) -> NDArray[np.float64]:
    """
    Rotation vector of ``R``; the inverse of :func:`so3_exp` for angles in [0, pi].

    Near pi the axis is recovered from the symmetric part of ``R`` instead of
    the (vanishing) antisymmetric part.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_theta = np.sqrt(vee @ vee)
    theta = np.arctan2(sin_theta, cos_theta)

    if theta < SMALL_ANGLE:
        return vee * (1.0 + theta * theta / 6.0)
    if cos_theta > -0.9:
        return vee * (theta / sin_theta)

    # near pi: R + R^T = 2 cos(t) I + 2 (1 - cos(t)) n n^T
    B = 0.5 * (R + R.T) - cos_theta * np.eye(3)
    k = int(np.argmax(np.diag(B)))
    n = B[:, k] / np.sqrt(B[k, k] * (1.0 - cos_theta))
    n /= np.linalg.norm(n)
    if n @ vee < 0.0:
        n = -n
    return theta * n


def nearest_rotation(M: ArrayLike) -> NDArray[np.float64]:
    """Closest rotation matrix to ``M`` in the Frobenius norm (polar projection)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R: ArrayLike, tol: float = 1e-12) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.max(np.abs(R @ R.T - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol
    )


def quat_to_rotation(q: ArrayLike) -> NDArray[np.float64]:
    """Rotation matrix of a Hamilton quaternion given as ``(w, x, y, z)``."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("quaternion must be finite and non-zero")
    w, x, y, z = q / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng: np.random.Generator) -> NDArray[np.float64]:
    """Uniformly distributed rotation (normalized Gaussian quaternion)."""
    q = rng.standard_normal(4)
    return quat_to_rotation(q)


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: NDArray[np.float64]
    translation: NDArray[np.float64]

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        """Transform a point or an ``(N, 3)`` array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def matrix(self) -> NDArray[np.float64]:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T
