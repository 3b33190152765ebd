"""Simulated world: ground-truth motion, multi-IMU readings, landmark views.

Motion is driven by sums of sinusoids for the body rate and the body-frame
kinematic acceleration. The trajectory is integrated with the same discrete
scheme the filter uses, so a noiseless IMU at the vehicle origin dead-reckons
back onto the ground truth up to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._kernels import backend as _nav
from ._random import as_generator, substream
from .geometry import quat_to_rotation
from .imu_model import ImuExtrinsics, ImuStream, NoiseSpec, bias_path, lever_arm_accel

GRAVITY = np.array([0.0, 0.0, 9.81])


@dataclass(frozen=True)
class SinusoidBank:
    """Per-axis sums ``offset + sum_m amp * sin(2 pi f t + phase)``; arrays
    are shaped ``(3, m)``."""

    amplitude: NDArray[np.float64]
    freq_hz: NDArray[np.float64]
    phase: NDArray[np.float64]
    offset: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        for name in ("amplitude", "freq_hz", "phase"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if arr.shape[0] != 3 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite (3, m) array")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))

    def _arg(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        return 2.0 * np.pi * self.freq_hz[None] * t[:, None, None] + self.phase[None]

    def value(self, t: ArrayLike) -> NDArray[np.float64]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self.offset + np.sum(self.amplitude * np.sin(self._arg(t)), axis=2)

    def derivative(self, t: ArrayLike) -> NDArray[np.float64]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        gain = 2.0 * np.pi * self.freq_hz * self.amplitude
        return np.sum(gain * np.cos(self._arg(t)), axis=2)


@dataclass(frozen=True)
class TrajectorySpec:
    """
    Sinusoidal motion description.

    ``omega`` drives the body rate (rad/s); ``accel`` the body-frame kinematic
    acceleration (m/s^2), so that ``dv/dt = C accel``. ``gravity`` enters as
    ``dv/dt = C f - gravity`` with ``f`` the specific force, i.e. it points up.
    """

    omega: SinusoidBank
    accel: SinusoidBank
    duration: float = 120.0
    gravity: NDArray[np.float64] = field(default_factory=lambda: GRAVITY.copy())
    C0: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    v0: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    p0: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        if not (np.isfinite(self.duration) and self.duration > 0.0):
            raise ValueError("duration must be positive")
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))


def default_trajectory(
    duration: float = 120.0, rng: np.random.Generator | None = None
) -> TrajectorySpec:
    """
    Three-axis sinusoidal motion: rate amplitudes up to 0.5 rad/s at
    0.1-0.3 Hz, acceleration amplitudes up to 1 m/s^2 at 0.1-0.25 Hz.
    Phases are drawn from ``rng`` when given.
    """
    w_amp = np.array([[0.3, 0.2], [0.25, 0.15], [0.5, 0.2]])
    w_freq = np.array([[0.1, 0.27], [0.13, 0.3], [0.11, 0.23]])
    a_amp = np.array([[1.0, 0.5], [0.8, 0.4], [0.5, 0.3]])
    a_freq = np.array([[0.1, 0.21], [0.12, 0.25], [0.15, 0.19]])
    if rng is None:
        w_phase = np.zeros((3, 2))
        a_phase = np.full((3, 2), 0.5 * np.pi)
    else:
        w_phase = rng.uniform(0.0, 2.0 * np.pi, (3, 2))
        a_phase = rng.uniform(0.0, 2.0 * np.pi, (3, 2))
    return TrajectorySpec(
        omega=SinusoidBank(w_amp, w_freq, w_phase),
        accel=SinusoidBank(a_amp, a_freq, a_phase),
        duration=duration,
    )


@dataclass
class GroundTruth:
    """
    Sampled true motion. ``C`` rotates vehicle to inertial; ``v``/``p`` are
    inertial; ``omega``, ``alpha`` and the specific force ``a_body`` are in
    the vehicle frame.
    """

    t: NDArray[np.float64]
    C: NDArray[np.float64]
    v: NDArray[np.float64]
    p: NDArray[np.float64]
    omega: NDArray[np.float64]
    a_body: NDArray[np.float64]
    alpha: NDArray[np.float64]
    gravity: NDArray[np.float64] = field(default_factory=lambda: GRAVITY.copy())

    def __len__(self) -> int:
        return len(self.t)

    @property
    def rate_hz(self) -> float:
        return 1.0 / float(self.t[1] - self.t[0])

    def index_of(self, t: float) -> int:
        k = int(np.searchsorted(self.t, t - 1e-9))
        if k >= len(self.t) or abs(self.t[k] - t) > 1e-9:
            raise KeyError(f"no ground-truth sample at t = {t}")
        return k


def interval_inputs(
    gyro: NDArray[np.float64], accel: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Inputs held over each sample interval: the mean of its two endpoints."""
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    return (
        np.ascontiguousarray(0.5 * (gyro[:-1] + gyro[1:])),
        np.ascontiguousarray(0.5 * (accel[:-1] + accel[1:])),
    )


def dead_reckon(
    t: NDArray[np.float64],
    gyro: NDArray[np.float64],
    accel: NDArray[np.float64],
    C0: ArrayLike,
    v0: ArrayLike,
    p0: ArrayLike,
    gravity: ArrayLike = GRAVITY,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Integrate debiased samples at times ``t``; returns states at every ``t``."""
    w_mid, a_mid = interval_inputs(gyro, accel)
    dt = np.ascontiguousarray(np.diff(np.asarray(t, dtype=float)))
    n = len(t)
    C = np.empty((n, 3, 3))
    v = np.empty((n, 3))
    p = np.empty((n, 3))
    _nav.integrate(
        np.asarray(C0, dtype=float), np.asarray(v0, dtype=float),
        np.asarray(p0, dtype=float), w_mid, a_mid, dt,
        np.ascontiguousarray(gravity, dtype=float), C, v, p,
    )
    return C, v, p


def generate_ground_truth(spec: TrajectorySpec, rate_hz: float = 100.0) -> GroundTruth:
    """
    Sample and integrate the trajectory at ``rate_hz``.

    Rotation advances by the exponential of the interval-mean rate; velocity
    and position by the midpoint rule. Angular acceleration is the analytic
    derivative of the rate bank.
    """
    if rate_hz <= 0.0:
        raise ValueError("rate_hz must be positive")
    n = int(round(spec.duration * rate_hz))
    t = np.arange(n + 1) / rate_hz
    omega = spec.omega.value(t)
    alpha = spec.omega.derivative(t)
    a_kin = spec.accel.value(t)

    # rotation does not depend on acceleration: integrate it first to get
    # the specific force, then run the full scheme
    C, _, _ = dead_reckon(t, omega, np.zeros_like(omega), spec.C0, spec.v0, spec.p0,
                          spec.gravity)
    a_body = a_kin + np.einsum("kji,j->ki", C, spec.gravity)
    C, v, p = dead_reckon(t, omega, a_body, spec.C0, spec.v0, spec.p0, spec.gravity)
    return GroundTruth(t, C, v, p, omega, a_body, alpha, spec.gravity.copy())


def synth_multi_imu(
    gt: GroundTruth,
    rig: list[tuple[ImuExtrinsics, NoiseSpec]],
    seed: int,
    turn_on_bias: tuple[float, float] = (0.0, 0.0),
) -> list[ImuStream]:
    """
    Readings of every IMU of ``rig`` along ``gt``.

    IMU ``j`` draws its noise from substreams keyed by its slot ``j`` in the
    rig, so rigs of equal size share noise realizations. ``turn_on_bias``
    gives the std of the initial gyro and accelerometer biases.
    """
    if not rig:
        raise ValueError("rig must contain at least one IMU")
    n = len(gt)
    dt = 1.0 / gt.rate_hz
    streams = []
    for j, (extr, spec) in enumerate(rig):
        rng_g = substream(seed, "imu", j, "gyro")
        rng_a = substream(seed, "imu", j, "accel")
        b_g = bias_path(turn_on_bias[0] * rng_g.standard_normal(3), spec.sigma_bg,
                        spec, dt, n, rng_g)
        b_a = bias_path(turn_on_bias[1] * rng_a.standard_normal(3), spec.sigma_ba,
                        spec, dt, n, rng_a)
        n_g = spec.sigma_g * rng_g.standard_normal((n, 3))
        n_a = spec.sigma_a * rng_a.standard_normal((n, 3))
        # row-wise C^T x is x @ C
        gyro = gt.omega @ extr.C + b_g + n_g
        specific = gt.a_body + lever_arm_accel(extr.r, gt.omega, gt.alpha)
        accel = specific @ extr.C + b_a + n_a
        streams.append(ImuStream(gt.t.copy(), gyro, accel, bias_g=b_g, bias_a=b_a))
    return streams


@dataclass(frozen=True)
class CameraModel:
    """
    Ideal pinhole camera; ``C_vc``/``r_vc`` place it in the vehicle frame.
    The optical axis is the camera z axis.
    """

    width: int = 640
    height: int = 480
    focal: float = 458.0
    cx: float = 320.0
    cy: float = 240.0
    sigma_px: float = 1.0
    C_vc: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    r_vc: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    landmarks_per_frame: int = 20
    depth_min: float = 2.0
    depth_max: float = 10.0

    def project(self, points_cam: NDArray[np.float64]) -> NDArray[np.float64]:
        points_cam = np.atleast_2d(points_cam)
        z = points_cam[:, 2:3]
        return self.focal * points_cam[:, :2] / z + np.array([self.cx, self.cy])

    def back_project(self, pixels: NDArray[np.float64], depth: NDArray[np.float64]):
        pixels = np.atleast_2d(pixels)
        rays = np.column_stack([
            (pixels[:, 0] - self.cx) / self.focal,
            (pixels[:, 1] - self.cy) / self.focal,
            np.ones(len(pixels)),
        ])
        return rays * np.asarray(depth, dtype=float)[:, None]

    def world_to_camera(self, C, p, landmarks):
        """Landmarks in the camera frame for vehicle pose ``(C, p)``."""
        body = (np.atleast_2d(landmarks) - p) @ C
        return (body - self.r_vc) @ self.C_vc


@dataclass(frozen=True)
class LandmarkObs:
    t: float
    pixel: NDArray[np.float64]
    landmark: NDArray[np.float64]
    cam_noise_sigma: float


def synth_landmark_obs(
    gt: GroundTruth, cam: CameraModel, rate_hz: float = 2.0, seed=0
) -> list[LandmarkObs]:
    """
    Fresh landmark observations for every camera frame.

    Each frame samples pixels uniformly over the image and depths uniformly
    in ``[depth_min, depth_max]``, lifts them to the inertial frame with the
    true pose, and stores the pixel with added Gaussian noise. Frames fall on
    ``k / rate_hz`` for ``k >= 1`` up to the end of the ground truth.
    """
    rng = as_generator(seed, "camera")
    step = int(round(gt.rate_hz / rate_hz))
    obs: list[LandmarkObs] = []
    m = cam.landmarks_per_frame
    for k in range(step, len(gt), step):
        pix = np.column_stack([
            rng.uniform(0.0, cam.width, m),
            rng.uniform(0.0, cam.height, m),
        ])
        depth = rng.uniform(cam.depth_min, cam.depth_max, m)
        body = cam.back_project(pix, depth) @ cam.C_vc.T + cam.r_vc
        world = body @ gt.C[k].T + gt.p[k]
        noisy = pix + cam.sigma_px * rng.standard_normal((m, 2))
        t = float(gt.t[k])
        obs.extend(
            LandmarkObs(t, noisy[i], world[i], cam.sigma_px) for i in range(m)
        )
    return obs


def group_frames(obs: list[LandmarkObs]) -> list[tuple[float, list[LandmarkObs]]]:
    """Observations grouped by timestamp, in time order."""
    frames: dict[float, list[LandmarkObs]] = {}
    for o in obs:
        frames.setdefault(o.t, []).append(o)
    return sorted(frames.items())


SYMMETRIC_AXES = {
    1: (1.0, 0.0, 0.0),
    2: (-1.0, 0.0, 0.0),
    3: (0.0, 1.0, 0.0),
    4: (0.0, -1.0, 0.0),
    5: (0.0, 0.0, 1.0),
    6: (0.0, 0.0, -1.0),
}


def imu_catalog(
    rig_seed: int = 0,
    offset: float = 1.0,
    perturb: tuple[float, float] = (0.1, 0.2),
) -> dict[int, ImuExtrinsics]:
    """
    The simulated IMU mounts, keyed by id.

    Id 0 sits at the origin. Ids 1-6 sit ``offset`` metres out along +x, -x,
    +y, -y, +z, -z with random orientations. Id ``10 + j`` copies the
    orientation of ``j``; each axis pair is slid along its axis by a shift
    whose magnitude is uniform in ``perturb`` and whose sign is random. The
    origin stays on every pair's line but off its midpoint, so reaching it
    needs unequal weights.
    """
    out = {0: ImuExtrinsics(_rig_rotation(rig_seed, 0), np.zeros(3))}
    for j, axis in SYMMETRIC_AXES.items():
        out[j] = ImuExtrinsics(_rig_rotation(rig_seed, j), offset * np.array(axis))
    lo, hi = perturb
    for pair, axis in enumerate(np.eye(3)):
        rng = substream(rig_seed, "rig", "shift", pair)
        shift = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0]) * axis
        for j in (2 * pair + 1, 2 * pair + 2):
            out[10 + j] = ImuExtrinsics(out[j].C, out[j].r + shift)
    return out


def _rig_rotation(rig_seed: int, imu_id: int) -> NDArray[np.float64]:
    q = substream(rig_seed, "rig", "orientation", imu_id).standard_normal(4)
    return quat_to_rotation(q)
