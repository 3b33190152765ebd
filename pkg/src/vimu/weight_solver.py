"""Averaging weights for a virtual IMU.

Two solvers are provided:

* :func:`solve_noise_only_weights` minimizes the fused variance
  ``sum((w_j * sigma_j)**2)`` subject only to ``sum(w) == 1``. This is the
  natural choice for gyroscopes, whose readings do not depend on position.
* :func:`solve_placement_weights` adds the constraint ``sum(w_j * r_j) == 0``
  so that the lever-arm terms of the accelerometers cancel and the virtual
  IMU sits at the origin of the frame the positions are expressed in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

FEASIBILITY_TOL = 1e-8
PINV_RCOND = 1e-10
NORMALIZATION_EPS = 1e-12


class Infeasible(ValueError):
    """The target lies outside the affine hull of the IMU positions."""

    def __init__(self, residual: NDArray[np.float64]):
        self.residual = np.asarray(residual, dtype=float)
        super().__init__(
            "target is outside the affine hull of the IMU positions; nearest "
            f"achievable placement residual {np.array2string(self.residual, precision=6)} "
            f"(|r| = {np.linalg.norm(self.residual):.6g} m)"
        )


class DegenerateNormalization(ValueError):
    pass


@dataclass(frozen=True)
class WeightProblem:
    """IMU positions relative to the target frame (m) and isotropic noise stds."""

    positions: NDArray[np.float64]
    sigmas: NDArray[np.float64]

    def __post_init__(self) -> None:
        positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError("positions must have shape (n, 3)")
        if len(positions) != len(sigmas) or len(sigmas) == 0:
            raise ValueError("need one sigma per position and at least one IMU")
        if not np.all(np.isfinite(positions)):
            raise ValueError("positions must be finite")
        if not np.all(sigmas > 0.0) or not np.all(np.isfinite(sigmas)):
            raise ValueError("sigmas must be finite and positive")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "sigmas", sigmas)


@dataclass(frozen=True)
class WeightSolution:
    weights: NDArray[np.float64]
    fused_sigma: float
    placement_residual: NDArray[np.float64]
    weight_norm_sq: float

    @property
    def amplifies_noise(self) -> bool:
        """True if identical IMUs would produce more noise than a single one."""
        return self.weight_norm_sq > 1.0


def placement_of(weights: ArrayLike, positions: ArrayLike) -> NDArray[np.float64]:
    """Weighted sum ``sum(w_j * r_j)``: where the virtual IMU sits."""
    w = np.asarray(weights, dtype=float)
    R = np.asarray(positions, dtype=float).reshape(len(w), 3)
    return w @ R


def fused_sigma(weights: ArrayLike, sigmas: ArrayLike) -> float:
    """Std of the weighted average of independent isotropic noises."""
    w = np.asarray(weights, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    return float(np.sqrt(np.sum((w * s) ** 2)))


def _solution(weights: NDArray[np.float64], problem: WeightProblem) -> WeightSolution:
    return WeightSolution(
        weights=weights,
        fused_sigma=fused_sigma(weights, problem.sigmas),
        placement_residual=placement_of(weights, problem.positions),
        weight_norm_sq=float(weights @ weights),
    )


def nearest_placement_residual(positions: ArrayLike) -> NDArray[np.float64]:
    """
    Point of the affine hull of ``positions`` closest to the origin.

    Zero (up to round-off) exactly when some weights with ``sum(w) == 1`` put
    the virtual IMU at the origin.
    """
    R = np.atleast_2d(np.asarray(positions, dtype=float))
    base = R[0]
    D = (R[1:] - base).T
    if D.shape[1] == 0:
        return base.copy()
    u, *_ = np.linalg.lstsq(D, -base, rcond=None)
    return base + D @ u


def _pinv_solve(A: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """
    ``(A^T A)^+ A^T b`` through the SVD of ``A``.

    Equal to applying the pseudo-inverse of the Gram matrix, but the error
    scales with ``cond(A)`` instead of its square. Eigenvalues of ``A^T A``
    below ``PINV_RCOND`` times the largest are dropped, i.e. singular values
    below ``sqrt(PINV_RCOND)`` times the largest.
    """
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.shape[1])
    keep = s > np.sqrt(PINV_RCOND) * s[0]
    return Vt[keep].T @ ((U[:, keep].T @ b) / s[keep])


def solve_placement_weights(problem: WeightProblem) -> WeightSolution:
    """
    Minimum-noise weights that place the virtual IMU at the origin.

    Solves ``min 1/2 sum((w_j sigma_j)^2)`` subject to ``sum(w_j r_j) = 0`` and
    ``sum(w_j) = 1`` in closed form: with ``S = diag(sigma^2)``,
    ``Rb = R S^-1`` and ``rb = Rb 1``, the unnormalized solution is
    ``S^-1 (1 - R^T (Rb R^T)^+ rb)`` which is then scaled to sum to one.

    Raises
    ------
    Infeasible
        If the origin is not in the affine hull of the positions.
    DegenerateNormalization
        If the unnormalized weights sum to (numerically) zero.
    """
    residual = nearest_placement_residual(problem.positions)
    if np.linalg.norm(residual) > FEASIBILITY_TOL:
        raise Infeasible(residual)

    R = problem.positions.T  # 3 x n
    s_inv = 1.0 / problem.sigmas**2
    # (Rb R^T)^+ rb with Rb R^T = A^T A and rb = A^T b for the scaled
    # A = S^-1/2 R^T, b = S^-1/2 1
    root = 1.0 / problem.sigmas
    lam = _pinv_solve(R.T * root[:, None], root)
    w_hat = s_inv * (1.0 - R.T @ lam)

    total = w_hat.sum()
    if abs(total) <= NORMALIZATION_EPS:
        raise DegenerateNormalization(
            f"unnormalized weights sum to {total:.3g}; cannot normalize"
        )
    return _solution(w_hat / total, problem)


def solve_noise_only_weights(sigmas: Sequence[float] | NDArray[np.float64],
                             positions: ArrayLike | None = None) -> WeightSolution:
    """
    Inverse-variance weights, the minimizer of the fused variance under
    ``sum(w) == 1``. ``positions`` only feed the reported placement residual.
    """
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if positions is None:
        positions = np.zeros((len(sigmas), 3))
    problem = WeightProblem(positions, sigmas)
    w = 1.0 / sigmas**2
    return _solution(w / w.sum(), problem)


@dataclass(frozen=True)
class WeightDiagnostics:
    weight_sum: float
    sums_to_one: bool
    weight_norm_sq: float
    amplifies_noise: bool
    has_negative: bool


def diagnose_weights(weights: ArrayLike, sum_tol: float = 1e-10) -> WeightDiagnostics:
    """
    Check a weight vector against the averaging rules.

    ``sum_tol`` may be loosened for weights that were printed with rounding.
    For identical IMUs the noise grows over that of a single IMU exactly when
    ``sum(w**2) > 1``.
    """
    w = np.asarray(weights, dtype=float)
    total = float(w.sum())
    norm_sq = float(w @ w)
    return WeightDiagnostics(
        weight_sum=total,
        sums_to_one=abs(total - 1.0) <= sum_tol,
        weight_norm_sq=norm_sq,
        amplifies_noise=norm_sq > 1.0,
        has_negative=bool(np.any(w < 0.0)),
    )
