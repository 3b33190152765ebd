"""Time the navigation kernels of every available backend.

    python benchmarks/bench_kernels.py [--steps 2000] [--repeat 5]

Prints the best-of-``repeat`` time per step for dead reckoning and for the
mean-plus-covariance filter prediction, and checks that the backends agree.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from vimu._kernels import available, get_backend
from vimu.sim_world import GRAVITY


def _inputs(steps: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    gyro = np.ascontiguousarray(rng.normal(0.0, 0.5, (steps, 3)))
    accel = np.ascontiguousarray(rng.normal(0.0, 1.0, (steps, 3)) + [0.0, 0.0, 9.81])
    dt = np.full(steps, 0.01)
    noise = np.array([0.005**2, 0.05**2, 1e-10, 1e-8, 100.0])
    return gyro, accel, dt, noise


def _integrate(mod, gyro, accel, dt):
    n = len(dt) + 1
    C, v, p = np.empty((n, 3, 3)), np.empty((n, 3)), np.empty((n, 3))
    mod.integrate(np.eye(3), np.zeros(3), np.zeros(3), gyro, accel, dt, GRAVITY, C, v, p)
    return C, v, p


def _propagate(mod, gyro, accel, dt, noise):
    C, v, p = np.eye(3), np.zeros(3), np.zeros(3)
    P = np.eye(15) * 1e-4
    mod.propagate(C, v, p, np.zeros(3), np.zeros(3), P, gyro, accel, dt, GRAVITY, noise)
    return C, v, p, P


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    gyro, accel, dt, noise = _inputs(args.steps)
    results = {}
    print(f"{'backend':<8} {'integrate us/step':>18} {'propagate us/step':>18}")
    for name in available():
        mod = get_backend(name)
        t_int = min(timeit.repeat(lambda: _integrate(mod, gyro, accel, dt),
                                  number=1, repeat=args.repeat))
        t_prop = min(timeit.repeat(lambda: _propagate(mod, gyro, accel, dt, noise),
                                   number=1, repeat=args.repeat))
        results[name] = (t_int, t_prop, _propagate(mod, gyro, accel, dt, noise))
        print(f"{name:<8} {1e6 * t_int / args.steps:18.2f} {1e6 * t_prop / args.steps:18.2f}")

    if len(results) == 2:
        ci, cp, cout = results["cython"]
        pi, pp, pout = results["python"]
        dev = max(float(np.max(np.abs(a - b))) for a, b in zip(cout, pout))
        print(f"speed-up: integrate x{pi / ci:.1f}, propagate x{pp / cp:.1f}")
        print(f"max |cython - python| after {args.steps} steps: {dev:.3g}")
    else:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
