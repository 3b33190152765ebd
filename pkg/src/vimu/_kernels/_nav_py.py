"""Pure-numpy navigation kernels (fallback for the compiled ``_nav_cy``).

Both backends implement the same discrete scheme. One step with debiased
body rate ``w`` and specific force ``a`` held over ``dt``::

    C+ = C Exp(w dt)
    v+ = v + (C Exp(w dt / 2) a - g) dt
    p+ = p + v dt + 1/2 (C Exp(w dt / 2) a - g) dt^2

followed by one Newton-Schulz step that pulls ``C+`` back onto SO(3).
The error state is left-invariant on (C, v, p) and additive on the biases,
ordered ``[rot, vel, pos, b_g, b_a]``.
"""

from __future__ import annotations

import numpy as np

from ..geometry import SMALL_ANGLE, skew, so3_exp

NAME = "python"


def right_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    theta2 = phi @ phi
    K = skew(phi)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    theta = np.sqrt(theta2)
    return (
        np.eye(3)
        - 2.0 * np.sin(0.5 * theta) ** 2 / theta2 * K
        + (theta - np.sin(theta)) / (theta2 * theta) * (K @ K)
    )


def orthonormalize(C):
    return 0.5 * C @ (3.0 * np.eye(3) - C.T @ C)


def transition(w, a, dt):
    """Error-state transition matrix of one step (15 x 15)."""
    G = so3_exp(w * dt).T
    H = so3_exp(0.5 * w * dt).T
    J = right_jacobian(w * dt)
    Jh = right_jacobian(0.5 * w * dt)
    HA = H @ skew(a)
    HAH = HA @ H
    HAJ = HA @ Jh

    Phi = np.eye(15)
    Phi[0:3, 0:3] = G
    Phi[0:3, 9:12] = -J * dt
    Phi[3:6, 0:3] = -HAH * dt
    Phi[3:6, 3:6] = G
    Phi[3:6, 9:12] = HAJ * (0.5 * dt * dt)
    Phi[3:6, 12:15] = -H * dt
    Phi[6:9, 0:3] = -HAH * (0.5 * dt * dt)
    Phi[6:9, 3:6] = G * dt
    Phi[6:9, 6:9] = G
    Phi[6:9, 9:12] = HAJ * (0.25 * dt * dt * dt)
    Phi[6:9, 12:15] = -H * (0.5 * dt * dt)
    return Phi


def process_noise(Phi, noise, dt):
    """Discrete process noise for one step; ``noise`` is
    ``[var_g, var_a, var_bg, var_ba, rate_hz]`` (per-sample variances)."""
    var_g, var_a, var_bg, var_ba, rate = noise
    white = 1.0 / (rate * dt)
    walk = rate * dt
    Bg = Phi[0:9, 9:12]
    Ba = Phi[0:9, 12:15]
    Q = np.zeros((15, 15))
    Q[0:9, 0:9] = (var_g * white) * (Bg @ Bg.T) + (var_a * white) * (Ba @ Ba.T)
    Q[9:12, 9:12] = var_bg * walk * np.eye(3)
    Q[12:15, 12:15] = var_ba * walk * np.eye(3)
    return Q


def _step(C, v, p, w, a, dt, gravity):
    C_mid = C @ so3_exp(0.5 * w * dt)
    C_new = orthonormalize(C @ so3_exp(w * dt))
    f = C_mid @ a - gravity
    v_new = v + f * dt
    p_new = p + v * dt + (0.5 * dt * dt) * f
    return C_new, v_new, p_new


def integrate(C0, v0, p0, gyro, accel, dt, gravity, C_out, v_out, p_out):
    """Dead-reckon ``len(dt)`` steps; writes ``len(dt) + 1`` states including
    the initial one."""
    C = np.array(C0, dtype=float)
    v = np.array(v0, dtype=float)
    p = np.array(p0, dtype=float)
    C_out[0], v_out[0], p_out[0] = C, v, p
    for k in range(len(dt)):
        C, v, p = _step(C, v, p, gyro[k], accel[k], dt[k], gravity)
        C_out[k + 1], v_out[k + 1], p_out[k + 1] = C, v, p


def propagate(C, v, p, bg, ba, P, gyro, accel, dt, gravity, noise,
              C_out=None, v_out=None, p_out=None):
    """
    Propagate mean and covariance through ``len(dt)`` steps in place.

    ``gyro``/``accel`` are raw (biased) inputs; the biases are held constant.
    When output arrays are given, the state after step ``k`` is written to
    row ``k``.
    """
    record = C_out is not None
    for k in range(len(dt)):
        w = gyro[k] - bg
        a = accel[k] - ba
        Phi = transition(w, a, dt[k])
        C_new, v_new, p_new = _step(C, v, p, w, a, dt[k], gravity)
        C[...] = C_new
        v[...] = v_new
        p[...] = p_new
        P_new = Phi @ P @ Phi.T + process_noise(Phi, noise, dt[k])
        P[...] = 0.5 * (P_new + P_new.T)
        if record:
            C_out[k], v_out[k], p_out[k] = C, v, p
