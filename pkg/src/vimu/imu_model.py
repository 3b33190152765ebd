"""Measurement model of a single physical IMU mounted on the vehicle.

A gyroscope reads the body rate rotated into its own frame plus bias and
white noise. An accelerometer offset by ``r`` from the vehicle origin also
senses the centripetal ``w x (w x r)`` and tangential ``alpha x r`` terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .geometry import is_rotation, skew


@dataclass(frozen=True)
class NoiseSpec:
    """
    White-noise and bias random-walk intensities of one IMU.

    All sigmas are per-sample standard deviations at ``rate_hz``: the white
    noise added to each reading, and the bias increment per sample period.
    Use :meth:`from_densities` to convert continuous-time densities.

    Parameters
    ----------
    sigma_g: float
        Gyro white noise, rad/s.
    sigma_a: float
        Accelerometer white noise, m/s^2.
    sigma_bg: float
        Gyro bias drift per sample, rad/s.
    sigma_ba: float
        Accelerometer bias drift per sample, m/s^2.
    rate_hz: float
        Sample rate the sigmas refer to.
    """

    sigma_g: float = 0.005
    sigma_a: float = 0.05
    sigma_bg: float = 1e-5
    sigma_ba: float = 1e-4
    rate_hz: float = 100.0

    def __post_init__(self) -> None:
        sigmas = (self.sigma_g, self.sigma_a, self.sigma_bg, self.sigma_ba)
        if not all(np.isfinite(s) and s >= 0.0 for s in sigmas):
            raise ValueError(f"noise sigmas must be finite and >= 0, got {sigmas}")
        if not (np.isfinite(self.rate_hz) and self.rate_hz > 0.0):
            raise ValueError(f"rate_hz must be > 0, got {self.rate_hz}")

    @classmethod
    def from_densities(
        cls,
        gyro_noise: float,
        accel_noise: float,
        gyro_walk: float,
        accel_walk: float,
        rate_hz: float,
    ) -> NoiseSpec:
        """
        Build a spec from continuous-time densities.

        White-noise densities (unit/sqrt(Hz)) scale up by ``sqrt(rate)``;
        random-walk densities (unit/sqrt(s)) scale down by ``sqrt(rate)``.
        """
        root = np.sqrt(rate_hz)
        return cls(
            sigma_g=gyro_noise * root,
            sigma_a=accel_noise * root,
            sigma_bg=gyro_walk / root,
            sigma_ba=accel_walk / root,
            rate_hz=rate_hz,
        )

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.sigma_g, self.sigma_a, self.sigma_bg, self.sigma_ba])


@dataclass(frozen=True)
class ImuExtrinsics:
    """Fixed mounting of an IMU: ``C`` rotates IMU-frame vectors into the vehicle
    frame, ``r`` is the IMU origin in the vehicle frame (m)."""

    C: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    r: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        C = np.asarray(self.C, dtype=float)
        r = np.asarray(self.r, dtype=float).reshape(3)
        if not is_rotation(C, tol=1e-9):
            raise ValueError("extrinsic rotation is not orthonormal")
        if not np.all(np.isfinite(r)):
            raise ValueError("extrinsic position must be finite")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: NDArray[np.float64]
    accel: NDArray[np.float64]


@dataclass(frozen=True)
class BiasState:
    b_g: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    b_a: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))


def synth_gyro(
    extr: ImuExtrinsics, omega_true: ArrayLike, bias: BiasState, noise_draw: ArrayLike
) -> NDArray[np.float64]:
    """Gyro reading in the IMU frame: ``C^T omega + b_g + n``."""
    return extr.C.T @ np.asarray(omega_true, dtype=float) + bias.b_g + noise_draw


def synth_accel(
    extr: ImuExtrinsics,
    a_true: ArrayLike,
    omega_true: ArrayLike,
    alpha_true: ArrayLike,
    bias: BiasState,
    noise_draw: ArrayLike,
) -> NDArray[np.float64]:
    """
    Accelerometer reading in the IMU frame.

    Parameters
    ----------
    extr: ImuExtrinsics
        Mounting of the IMU.
    a_true: array-like
        Specific force at the vehicle origin, vehicle frame (m/s^2).
    omega_true, alpha_true: array-like
        Body angular rate (rad/s) and angular acceleration (rad/s^2).
    bias: BiasState
        Current sensor bias; only ``b_a`` is used.
    noise_draw: array-like
        White-noise sample added to the reading.
    """
    W = skew(omega_true)
    lever = W @ (W @ extr.r) + skew(alpha_true) @ extr.r
    return extr.C.T @ (np.asarray(a_true, dtype=float) + lever) + bias.b_a + noise_draw


def lever_arm_accel(
    r: NDArray[np.float64], omega: NDArray[np.float64], alpha: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Vectorized ``w x (w x r) + alpha x r`` for ``(N, 3)`` rate histories."""
    return np.cross(omega, np.cross(omega, r)) + np.cross(alpha, r)


def _walk_scale(sigma: float, spec: NoiseSpec, dt: float) -> float:
    return sigma * np.sqrt(dt * spec.rate_hz)


def step_bias(
    bias: BiasState, spec: NoiseSpec, dt: float, rng: np.random.Generator
) -> BiasState:
    """
    Advance both biases by one random-walk increment.

    The increment std is the per-sample drift scaled by ``sqrt(dt * rate_hz)``,
    so ``k`` steps of one sample period accumulate variance ``k * sigma**2``.
    The gyro axes are drawn before the accelerometer axes.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    draw = rng.standard_normal(6)
    return BiasState(
        b_g=bias.b_g + _walk_scale(spec.sigma_bg, spec, dt) * draw[:3],
        b_a=bias.b_a + _walk_scale(spec.sigma_ba, spec, dt) * draw[3:],
    )


def bias_path(
    b0: ArrayLike, sigma: float, spec: NoiseSpec, dt: float, n: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Random-walk bias history of length ``n`` starting at ``b0`` (vectorized)."""
    b0 = np.asarray(b0, dtype=float)
    steps = _walk_scale(sigma, spec, dt) * rng.standard_normal((n - 1, 3))
    path = np.empty((n, 3))
    path[0] = b0
    path[1:] = b0 + np.cumsum(steps, axis=0)
    return path


@dataclass
class ImuStream:
    """
    Time-ordered readings of one IMU, stored column-wise.

    ``bias_g``/``bias_a`` carry the true bias histories when the stream was
    simulated; they are ``None`` for recorded data.
    """

    t: NDArray[np.float64]
    gyro: NDArray[np.float64]
    accel: NDArray[np.float64]
    bias_g: NDArray[np.float64] | None = None
    bias_a: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        n = len(self.t)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(n, 3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(n, 3)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for k in range(len(self.t)):
            yield ImuSample(float(self.t[k]), self.gyro[k], self.accel[k])

    @classmethod
    def from_samples(cls, samples) -> ImuStream:
        samples = list(samples)
        if not samples:
            return cls(np.empty(0), np.empty((0, 3)), np.empty((0, 3)))
        return cls(
            np.array([s.t for s in samples]),
            np.array([s.gyro for s in samples]),
            np.array([s.accel for s in samples]),
        )

    def is_strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.t) > 0.0))
