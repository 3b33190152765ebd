import importlib
import sys

import numpy as np
import pytest

import vimu._kernels as kernels
from vimu._kernels import _nav_py, available, get_backend
from vimu.geometry import is_rotation, so3_exp
from vimu.sim_world import GRAVITY

needs_cython = pytest.mark.skipif("cython" not in available(), reason="extension not built")


def inputs(rng, steps=500):
    gyro = np.ascontiguousarray(rng.normal(0.0, 0.7, (steps, 3)))
    accel = np.ascontiguousarray(rng.normal(0.0, 2.0, (steps, 3)) + [0, 0, 9.81])
    dt = rng.uniform(0.005, 0.02, steps)
    return gyro, accel, dt


def run_propagate(mod, gyro, accel, dt, record=True):
    C, v, p = np.eye(3), np.array([1.0, 0, 0]), np.zeros(3)
    P = np.eye(15) * 1e-3
    noise = np.array([0.005**2, 0.05**2, 1e-10, 1e-8, 100.0])
    n = len(dt)
    outs = (np.empty((n, 3, 3)), np.empty((n, 3)), np.empty((n, 3))) if record else ()
    mod.propagate(C, v, p, np.array([0.01, 0, 0]), np.array([0, 0.1, 0]), P,
                  gyro, accel, dt, GRAVITY, noise, *outs)
    return C, v, p, P, outs


def test_get_backend():
    assert get_backend("python") is _nav_py
    with pytest.raises(ValueError):
        get_backend("fortran")
    assert "python" in available()


def test_fallback_when_extension_missing(monkeypatch):
    monkeypatch.setitem(sys.modules, "vimu._kernels._nav_cy", None)
    # a loaded submodule is also a package attribute, which `from . import` finds first
    monkeypatch.delattr(kernels, "_nav_cy", raising=False)
    try:
        mod = importlib.reload(kernels)
        assert mod.backend is mod._nav_py
        assert mod.available() == ["python"]
    finally:
        monkeypatch.undo()
        importlib.reload(kernels)


@needs_cython
def test_backends_agree_on_integration(rng):
    gyro, accel, dt = inputs(rng)
    out = {}
    for name in ("cython", "python"):
        n = len(dt) + 1
        C, v, p = np.empty((n, 3, 3)), np.empty((n, 3)), np.empty((n, 3))
        get_backend(name).integrate(so3_exp([0.1, 0.2, 0.3]), np.ones(3), np.zeros(3),
                                    gyro, accel, dt, GRAVITY, C, v, p)
        out[name] = (C, v, p)
    for a, b in zip(out["cython"], out["python"]):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


@needs_cython
def test_backends_agree_on_propagation(rng):
    gyro, accel, dt = inputs(rng)
    cy = run_propagate(get_backend("cython"), gyro, accel, dt)
    py = run_propagate(get_backend("python"), gyro, accel, dt)
    for a, b in zip(cy[:4], py[:4]):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-10)
    for a, b in zip(cy[4], py[4]):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


@needs_cython
def test_transition_agrees(rng):
    w, a = rng.normal(size=(2, 3))
    np.testing.assert_allclose(get_backend("cython").transition(w, a, 0.01),
                               _nav_py.transition(w, a, 0.01), atol=1e-15)


@pytest.mark.parametrize("name", available())
def test_propagated_covariance_is_symmetric_psd(rng, name):
    gyro, accel, dt = inputs(rng, 2000)
    C, _, _, P, _ = run_propagate(get_backend(name), gyro, accel, dt, record=False)
    assert is_rotation(C, tol=1e-12)
    np.testing.assert_array_equal(P, P.T)
    assert np.linalg.eigvalsh(P).min() >= -1e-10


@pytest.mark.parametrize("name", available())
def test_rotation_stays_orthonormal(name):
    # fast spin for 10^5 steps
    steps = 100_000
    gyro = np.tile([3.0, -2.0, 5.0], (steps, 1))
    accel = np.zeros((steps, 3))
    dt = np.full(steps, 0.01)
    C, v, p = np.empty((steps + 1, 3, 3)), np.empty((steps + 1, 3)), np.empty((steps + 1, 3))
    get_backend(name).integrate(np.eye(3), np.zeros(3), np.zeros(3), gyro, accel, dt,
                                np.zeros(3), C, v, p)
    assert is_rotation(C[-1], tol=1e-13)
