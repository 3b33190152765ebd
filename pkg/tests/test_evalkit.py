from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vimu.evalkit import (
    CONFIGS,
    EmptySeries,
    ErrorSeries,
    RunSummary,
    Scenario,
    TimestampMismatch,
    bootstrap_trends,
    compute_errors,
    fused_noise_std,
    make_world,
    rotation_angle,
    run_config,
    run_experiment,
    summarize,
    table,
)
from vimu.geometry import random_rotation, so3_exp
from vimu.liekf import Estimate
from vimu.sim_world import GroundTruth, default_trajectory, generate_ground_truth


@pytest.fixture(scope="module")
def gt():
    return generate_ground_truth(default_trajectory(2.0))


def estimate_from(gt: GroundTruth, C, p, idx=slice(None)):
    n = len(gt.t[idx])
    z = np.zeros((n, 3))
    return Estimate(gt.t[idx], C, gt.v[idx], p, z, z, np.zeros((n, 15)))


def test_known_errors(gt):
    C = gt.C @ so3_exp([0.0, 0.02, 0.0])
    p = gt.p + [3.0, 4.0, 0.0]
    errs = compute_errors(estimate_from(gt, C, p), gt)
    np.testing.assert_allclose(errs.rot, 0.02, rtol=1e-9)
    np.testing.assert_allclose(errs.pos, 5.0, rtol=1e-12)


def test_errors_on_subset_of_times(gt):
    idx = slice(10, 60, 5)
    errs = compute_errors(estimate_from(gt, gt.C[idx], gt.p[idx], idx), gt)
    np.testing.assert_array_equal(errs.t, gt.t[idx])
    np.testing.assert_allclose(errs.rot, 0.0, atol=1e-12)


def test_timestamp_mismatch(gt):
    est = estimate_from(gt, gt.C, gt.p)
    est.t = est.t + 0.003
    with pytest.raises(TimestampMismatch):
        compute_errors(est, gt)


@pytest.mark.parametrize("angle", [0.0, 1e-9, 0.3, 2.0, np.pi - 1e-6, np.pi])
def test_rotation_angle(rng, angle):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    assert rotation_angle(so3_exp(angle * axis)) == pytest.approx(angle, abs=1e-12)


def test_summary_values():
    s = summarize(ErrorSeries(np.arange(2.0), np.array([0.0, 2.0]), np.array([0.0, 2.0])))
    assert s.rot_mae == 1.0 and s.pos_mae == 1.0
    assert s.rot_rmse == pytest.approx(np.sqrt(2.0))


def test_empty_series():
    with pytest.raises(EmptySeries):
        summarize(ErrorSeries(np.array([]), np.array([]), np.array([])))


@given(st.lists(st.floats(0.0, 1e3), min_size=1, max_size=50))
def test_rmse_dominates_mae(values):
    e = np.array(values)
    s = summarize(ErrorSeries(np.arange(len(e), dtype=float), e, e))
    assert s.rot_rmse >= s.rot_mae * (1 - 1e-12)


def synthetic_summaries(gap, n_seeds=20, spread=0.1, seed=0):
    rng = np.random.default_rng(seed)
    level = {"S0": 4, "S2": 3, "S4": 2, "S6": 1, "A2": 3, "A4": 2, "A6": 1}
    out = []
    for s in range(n_seeds):
        shared = rng.normal(0, spread)
        for c, lv in level.items():
            v = 1.0 + gap * lv + shared + rng.normal(0, spread) + (0.5 * gap if c[0] == "A" else 0.0)
            out.append(RunSummary(c, s, v, v, v, v))
    return out


def test_bootstrap_accepts_clear_trend():
    rep = bootstrap_trends(synthetic_summaries(gap=1.0))
    assert rep.passed
    assert rep.joint_fraction == 1.0
    assert len(rep.observed) == 12


def test_bootstrap_rejects_flat_configs():
    rep = bootstrap_trends(synthetic_summaries(gap=0.0, spread=0.5))
    assert not rep.passed
    assert rep.joint_fraction < 0.9


def test_bootstrap_reproducible():
    a = bootstrap_trends(synthetic_summaries(0.05), seed=3)
    b = bootstrap_trends(synthetic_summaries(0.05), seed=3)
    assert a.as_dict() == b.as_dict()


def test_table_means():
    t = table([RunSummary("S0", 0, 1.0, 2.0, 3.0, 4.0), RunSummary("S0", 1, 3.0, 2.0, 1.0, 0.0)])
    assert t["S0"] == {"rot_mae": 2.0, "rot_rmse": 2.0, "pos_mae": 2.0, "pos_rmse": 2.0,
                       "n_seeds": 2}


def test_scenario_rig():
    sc = Scenario()
    assert [len(sc.rig(c)) for c in CONFIGS] == [1, 2, 4, 6, 2, 4, 6]
    with pytest.raises(KeyError):
        sc.rig("S3")


@pytest.fixture(scope="module")
def short():
    return Scenario(duration=20.0)


def test_fused_noise_halves_with_four_imus(short):
    world = make_world(short, 0)
    res = run_config(short, world, "S4")
    g, a = fused_noise_std(res.fused, world.gt, res.vimu, res.streams)
    w = res.vimu
    np.testing.assert_allclose(w.w_accel, 0.25, atol=1e-12)
    assert g == pytest.approx(short.noise.sigma_g / 2, rel=0.05)
    assert a == pytest.approx(short.noise.sigma_a / 2, rel=0.05)


def test_single_seed_deterministic(short):
    a = run_experiment(short, ("S0", "A2"), n_seeds=1)
    b = run_experiment(short, ("S0", "A2"), n_seeds=1)
    assert [replace(s, wall_time=0) for s in a] == [replace(s, wall_time=0) for s in b]


def test_parallel_matches_serial(short):
    serial = run_experiment(short, ("S0", "S2"), n_seeds=2)
    parallel = run_experiment(short, ("S0", "S2"), n_seeds=2, workers=2)
    strip = [replace(s, wall_time=0) for s in serial]
    assert strip == [replace(s, wall_time=0) for s in parallel]
    assert [(s.seed, s.config) for s in serial] == [(0, "S0"), (0, "S2"), (1, "S0"), (1, "S2")]


def test_series_written(short, tmp_path):
    run_experiment(short, ("S0",), n_seeds=1, series_dir=tmp_path)
    assert (tmp_path / "errors_S0_seed0.csv").exists()


def test_errors_are_small_and_paired(short):
    world = make_world(short, 1)
    s0 = run_config(short, world, "S0").summary
    assert s0.rot_mae < 0.01 and s0.pos_mae < 0.1
    # identical world and slot noise reproduce the same numbers
    assert replace(run_config(short, world, "S0").summary, wall_time=0) == replace(s0, wall_time=0)


def test_random_rotation_error_bounded(rng, gt):
    C = np.array([random_rotation(rng) for _ in gt.t])
    errs = compute_errors(estimate_from(gt, C, gt.p), gt)
    assert np.all((errs.rot >= 0) & (errs.rot <= np.pi + 1e-12))
