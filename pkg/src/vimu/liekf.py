"""Left-invariant EKF on (C, v, p) with additive combined-bias states.

The estimate is ``X_hat = X exp(xi)`` where ``X`` is the extended pose
``(C, v, p)``; the 15-dimensional error is ``[xi_rot, xi_vel, xi_pos,
db_g, db_a]`` with ``db = b_hat - b``. Propagation uses the compiled kernel
when available (see :mod:`vimu._kernels`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from ._kernels import backend as _nav
from ._random import as_generator
from .fusion import VimuSample
from .geometry import SMALL_ANGLE, random_rotation, skew, so3_exp, so3_log
from .imu_model import ImuStream, NoiseSpec
from .sim_world import GRAVITY, CameraModel, LandmarkObs, interval_inputs

COND_LIMIT = 1e12


class NonFiniteState(FloatingPointError):
    pass


class SingularInnovation(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class NavState:
    C: NDArray[np.float64]
    v: NDArray[np.float64]
    p: NDArray[np.float64]
    b_g: NDArray[np.float64]
    b_a: NDArray[np.float64]

    @classmethod
    def identity(cls) -> NavState:
        z = np.zeros(3)
        return cls(np.eye(3), z, z, z, z)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(x)) for x in (self.C, self.v, self.p, self.b_g, self.b_a))


@dataclass(frozen=True)
class FilterBelief:
    state: NavState
    cov: NDArray[np.float64]


def initial_belief(
    C, v, p,
    sigma_rot: float = 0.01,
    sigma_vel: float = 0.05,
    sigma_pos: float = 0.05,
    sigma_bg: float = 1e-3,
    sigma_ba: float = 1e-2,
) -> FilterBelief:
    """Belief centred on the given pose with zero biases and diagonal covariance."""
    z = np.zeros(3)
    sig = np.repeat([sigma_rot, sigma_vel, sigma_pos, sigma_bg, sigma_ba], 3)
    state = NavState(np.array(C, dtype=float), np.array(v, dtype=float),
                     np.array(p, dtype=float), z.copy(), z.copy())
    return FilterBelief(state, np.diag(sig**2))


def _left_jacobian(phi: NDArray[np.float64]) -> NDArray[np.float64]:
    theta2 = phi @ phi
    K = skew(phi)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    theta = np.sqrt(theta2)
    return (
        np.eye(3)
        + 2.0 * np.sin(0.5 * theta) ** 2 / theta2 * K
        + (theta - np.sin(theta)) / (theta2 * theta) * (K @ K)
    )


def retract(state: NavState, delta: NDArray[np.float64]) -> NavState:
    """``X exp(delta[:9])`` on the extended pose, additive on the biases."""
    J = _left_jacobian(delta[0:3])
    return NavState(
        C=state.C @ so3_exp(delta[0:3]),
        v=state.v + state.C @ (J @ delta[3:6]),
        p=state.p + state.C @ (J @ delta[6:9]),
        b_g=state.b_g + delta[9:12],
        b_a=state.b_a + delta[12:15],
    )


def local(reference: NavState, other: NavState) -> NDArray[np.float64]:
    """Inverse of :func:`retract`: the error taking ``reference`` to ``other``."""
    phi = so3_log(reference.C.T @ other.C)
    J_inv = np.linalg.inv(_left_jacobian(phi))
    return np.concatenate([
        phi,
        J_inv @ (reference.C.T @ (other.v - reference.v)),
        J_inv @ (reference.C.T @ (other.p - reference.p)),
        other.b_g - reference.b_g,
        other.b_a - reference.b_a,
    ])


def _noise_vector(spec: NoiseSpec) -> NDArray[np.float64]:
    return np.array([spec.sigma_g**2, spec.sigma_a**2, spec.sigma_bg**2,
                     spec.sigma_ba**2, spec.rate_hz])


def _propagate_arrays(belief, gyro, accel, dt, spec, gravity, record=False):
    s = belief.state
    C, v, p = s.C.copy(), s.v.copy(), s.p.copy()
    P = np.array(belief.cov, dtype=float, order="C")
    gyro = np.ascontiguousarray(gyro, dtype=float).reshape(-1, 3)
    accel = np.ascontiguousarray(accel, dtype=float).reshape(-1, 3)
    dt = np.ascontiguousarray(dt, dtype=float).reshape(-1)
    if np.any(dt <= 0.0):
        raise ValueError("dt must be positive")
    outs = (None, None, None)
    if record:
        k = len(dt)
        outs = (np.empty((k, 3, 3)), np.empty((k, 3)), np.empty((k, 3)))
    bg = np.ascontiguousarray(s.b_g, dtype=float)
    ba = np.ascontiguousarray(s.b_a, dtype=float)
    _nav.propagate(C, v, p, bg, ba, P, gyro, accel, dt,
                   np.ascontiguousarray(gravity, dtype=float), _noise_vector(spec), *outs)
    new = FilterBelief(NavState(C, v, p, s.b_g.copy(), s.b_a.copy()), P)
    if not new.state.is_finite() or not np.all(np.isfinite(P)):
        raise NonFiniteState("propagation produced non-finite values")
    return new, outs


def propagate(
    belief: FilterBelief,
    sample: VimuSample,
    fused_spec: NoiseSpec,
    dt: float,
    gravity=GRAVITY,
) -> FilterBelief:
    """
    Advance the belief by ``dt`` with the fused reading held over the step.

    ``sample`` should be the interval input (the mean of the two fused
    samples bounding the step, see :func:`vimu.sim_world.interval_inputs`);
    the estimated biases are subtracted before integration.
    """
    new, _ = _propagate_arrays(belief, sample.gyro, sample.accel, [dt], fused_spec, gravity)
    return new


def _predict(state: NavState, landmarks: NDArray[np.float64], cam: CameraModel):
    pc = cam.world_to_camera(state.C, state.p, landmarks)
    return pc, cam.project(pc)


def measurement_jacobian(state: NavState, landmarks, cam: CameraModel) -> NDArray[np.float64]:
    """Jacobian of the stacked pixel predictions w.r.t. the error state."""
    landmarks = np.atleast_2d(landmarks)
    body = (landmarks - state.p) @ state.C
    pc = (body - cam.r_vc) @ cam.C_vc
    H = np.zeros((2 * len(landmarks), 15))
    for i, (b, c) in enumerate(zip(body, pc)):
        x, y, z = c
        J_pi = cam.focal / z * np.array([[1.0, 0.0, -x / z], [0.0, 1.0, -y / z]])
        J_c = J_pi @ cam.C_vc.T
        H[2 * i:2 * i + 2, 0:3] = J_c @ skew(b)
        H[2 * i:2 * i + 2, 6:9] = -J_c
    return H


def update_landmarks(
    belief: FilterBelief, obs: list[LandmarkObs], cam: CameraModel
) -> FilterBelief:
    """
    One stacked EKF correction from the pixel observations of known
    landmarks. Observations predicted behind the camera are skipped.

    Raises
    ------
    SingularInnovation
        If the innovation covariance has condition number above 1e12.
    """
    if not obs:
        raise ValueError("need at least one observation")
    landmarks = np.array([o.landmark for o in obs])
    pixels = np.array([o.pixel for o in obs])
    sigmas = np.array([o.cam_noise_sigma for o in obs])
    state = belief.state

    pc, pred = _predict(state, landmarks, cam)
    visible = pc[:, 2] > 1e-6
    if not np.any(visible):
        return belief
    landmarks, pixels, sigmas, pred = (x[visible] for x in (landmarks, pixels, sigmas, pred))

    H = measurement_jacobian(state, landmarks, cam)
    Rm = np.diag(np.repeat(sigmas**2, 2))
    P = belief.cov
    S = H @ P @ H.T + Rm
    if np.linalg.cond(S) > COND_LIMIT:
        raise SingularInnovation("innovation covariance is ill-conditioned")
    K = np.linalg.solve(S, H @ P).T
    innovation = (pixels - pred).reshape(-1)
    delta = K @ innovation

    I_KH = np.eye(15) - K @ H
    P_new = I_KH @ P @ I_KH.T + K @ Rm @ K.T
    P_new = 0.5 * (P_new + P_new.T)
    return FilterBelief(retract(state, delta), P_new)


@dataclass(frozen=True)
class JacobianReport:
    max_rel_propagation: float
    max_rel_measurement: float

    @property
    def max_rel(self) -> float:
        return max(self.max_rel_propagation, self.max_rel_measurement)


def _rel_dev(analytic, numeric) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-300)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def jacobian_check(
    belief: FilterBelief,
    sample: VimuSample,
    obs: list[LandmarkObs],
    cam: CameraModel | None = None,
    dt: float = 0.01,
    step: float = 1e-6,
    gravity=GRAVITY,
) -> JacobianReport:
    """
    Compare the analytic transition and measurement Jacobians with central
    differences taken on the error-state manifold.

    Deviations are normwise: ``max|A - N| / max(|A|, |N|)`` over each matrix.
    """
    cam = cam or CameraModel()
    state = belief.state
    spec = NoiseSpec(0.0, 0.0, 0.0, 0.0, 1.0 / dt)

    def prop(s: NavState) -> NavState:
        b = FilterBelief(s, np.zeros((15, 15)))
        return _propagate_arrays(b, sample.gyro, sample.accel, [dt], spec, gravity)[0].state

    nominal = prop(state)
    Phi_num = np.zeros((15, 15))
    for i in range(15):
        e = np.zeros(15)
        e[i] = step
        plus = local(nominal, prop(retract(state, e)))
        minus = local(nominal, prop(retract(state, -e)))
        Phi_num[:, i] = (plus - minus) / (2.0 * step)

    w = np.asarray(sample.gyro, dtype=float) - state.b_g
    a = np.asarray(sample.accel, dtype=float) - state.b_a
    Phi = _nav.transition(np.ascontiguousarray(w), np.ascontiguousarray(a), dt)

    landmarks = np.array([o.landmark for o in obs]).reshape(-1, 3)
    H = measurement_jacobian(state, landmarks, cam)
    H_num = np.zeros_like(H)
    for i in range(15):
        e = np.zeros(15)
        e[i] = step
        hp = _predict(retract(state, e), landmarks, cam)[1].reshape(-1)
        hm = _predict(retract(state, -e), landmarks, cam)[1].reshape(-1)
        H_num[:, i] = (hp - hm) / (2.0 * step)

    return JacobianReport(_rel_dev(Phi, Phi_num), _rel_dev(H, H_num))


def random_check_case(seed: int, cam: CameraModel | None = None, n_obs: int = 5):
    """A random belief, interval input and landmark set for :func:`jacobian_check`."""
    cam = cam or CameraModel()
    rng = as_generator(seed, "jacobian")
    state = NavState(
        random_rotation(rng),
        rng.normal(0.0, 2.0, 3),
        rng.normal(0.0, 5.0, 3),
        rng.normal(0.0, 0.01, 3),
        rng.normal(0.0, 0.1, 3),
    )
    sample = VimuSample(0.0, rng.normal(0.0, 1.0, 3), rng.normal(0.0, 5.0, 3) + [0, 0, 9.81])
    pix = np.column_stack([rng.uniform(0, cam.width, n_obs), rng.uniform(0, cam.height, n_obs)])
    body = cam.back_project(pix, rng.uniform(cam.depth_min, cam.depth_max, n_obs))
    world = (body @ cam.C_vc.T + cam.r_vc) @ state.C.T + state.p
    obs = [LandmarkObs(0.0, pix[i], world[i], cam.sigma_px) for i in range(n_obs)]
    return FilterBelief(state, np.eye(15) * 1e-4), sample, obs


@dataclass
class Estimate:
    """Filter output at every fused-sample time."""

    t: NDArray[np.float64]
    C: NDArray[np.float64]
    v: NDArray[np.float64]
    p: NDArray[np.float64]
    b_g: NDArray[np.float64]
    b_a: NDArray[np.float64]
    cov_diag: NDArray[np.float64]


def run_filter(
    stream: ImuStream,
    frames: list[tuple[float, list[LandmarkObs]]],
    cam: CameraModel,
    fused_spec: NoiseSpec,
    belief: FilterBelief,
    gravity=GRAVITY,
) -> Estimate:
    """
    Propagate through every fused sample and correct at each camera frame.

    ``belief`` refers to ``stream.t[0]``. Frames must fall on sample times;
    those outside the stream are ignored.
    """
    t = stream.t
    n = len(t)
    w_mid, a_mid = interval_inputs(stream.gyro, stream.accel)
    dts = np.diff(t)
    out = Estimate(t.copy(), np.empty((n, 3, 3)), np.empty((n, 3)), np.empty((n, 3)),
                   np.empty((n, 3)), np.empty((n, 3)), np.empty((n, 15)))

    def store(k0, k1, C, v, p, b):
        out.C[k0:k1], out.v[k0:k1], out.p[k0:k1] = C, v, p
        out.b_g[k0:k1] = b.state.b_g
        out.b_a[k0:k1] = b.state.b_a
        out.cov_diag[k0:k1] = np.diag(b.cov)

    s = belief.state
    store(0, 1, s.C, s.v, s.p, belief)
    updates = [(int(np.searchsorted(t, ft - 1e-9)), obs) for ft, obs in frames]
    updates = [(k, obs) for k, obs in updates if 0 < k < n and abs(t[k] - obs[0].t) < 1e-9]
    updates.append((n - 1, None))

    k = 0
    for k_next, obs in updates:
        if k_next > k:
            belief, (C, v, p) = _propagate_arrays(
                belief, w_mid[k:k_next], a_mid[k:k_next], dts[k:k_next],
                fused_spec, gravity, record=True,
            )
            store(k + 1, k_next + 1, C, v, p, belief)
            k = k_next
        if obs:
            belief = update_landmarks(belief, obs, cam)
            s = belief.state
            store(k, k + 1, s.C, s.v, s.p, belief)
    return out


def with_state(belief: FilterBelief, **changes) -> FilterBelief:
    return FilterBelief(replace(belief.state, **changes), belief.cov)
