import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vimu.fusion import (
    EmptyOverlap,
    LengthMismatch,
    NonMonotonicTimestamps,
    VimuConfig,
    VimuSample,
    debias,
    fuse_accel,
    fuse_gyro,
    fuse_stream,
    fused_bias_spec,
)
from vimu.geometry import random_rotation, so3_exp
from vimu.imu_model import BiasState, ImuExtrinsics, ImuStream, NoiseSpec, synth_accel, synth_gyro
from vimu.weight_solver import WeightProblem, solve_placement_weights

ZERO = np.zeros(3)
NO_BIAS = BiasState()


def random_rig(rng, n, max_r=2.0):
    """Random mounts within ``max_r`` of an origin that lies inside their hull."""
    pos = rng.normal(size=(n, 3))
    pos -= rng.dirichlet(np.ones(n)) @ pos
    pos *= rng.uniform(0.1, max_r) / np.linalg.norm(pos, axis=1).max()
    return [ImuExtrinsics(random_rotation(rng), r) for r in pos]


def placement_config(extr, sigmas=None):
    n = len(extr)
    sigmas = np.ones(n) if sigmas is None else np.asarray(sigmas)
    w = solve_placement_weights(WeightProblem([e.r for e in extr], sigmas)).weights
    return VimuConfig(extr, w, w)


def pair(r=1.0, C2=None):
    C2 = np.eye(3) if C2 is None else C2
    return [ImuExtrinsics(np.eye(3), [r, 0, 0]), ImuExtrinsics(C2, [-r, 0, 0])]


def test_config_rejects_bad_weights():
    extr = pair()
    with pytest.raises(ValueError, match="sum"):
        VimuConfig(extr, [0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ValueError, match="lever arm"):
        VimuConfig(extr, [0.5, 0.5], [0.7, 0.3])
    with pytest.raises(LengthMismatch):
        VimuConfig(extr, [1.0], [0.5, 0.5])


def test_build_defaults():
    cfg = VimuConfig.build(pair(), [NoiseSpec(sigma_g=0.01), NoiseSpec(sigma_g=0.02)])
    np.testing.assert_allclose(cfg.w_gyro, [0.8, 0.2])
    np.testing.assert_allclose(cfg.w_accel, [0.5, 0.5])
    assert cfg.fused_noise.sigma_a == pytest.approx(0.05 / np.sqrt(2))


def test_identical_readings_pass_through():
    cfg = VimuConfig([ImuExtrinsics()] * 3, np.full(3, 1 / 3), np.full(3, 1 / 3))
    y = np.array([0.3, -0.2, 0.1])
    np.testing.assert_allclose(fuse_gyro(cfg, [y, y, y]), y, rtol=1e-15)


def test_gyro_frame_alignment():
    cfg = VimuConfig(pair(C2=so3_exp([0, 0, np.pi / 2])), [0.5, 0.5], [0.5, 0.5])
    np.testing.assert_allclose(fuse_gyro(cfg, [[1, 0, 0], [0, -1, 0]]), [1, 0, 0], atol=1e-15)


def test_length_mismatch():
    cfg = VimuConfig(pair(), [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(LengthMismatch):
        fuse_gyro(cfg, [[1, 0, 0]])
    with pytest.raises(LengthMismatch):
        fuse_accel(cfg, [[1, 0, 0]] * 3)


def test_centripetal_cancels():
    cfg = VimuConfig(pair(), [0.5, 0.5], [0.5, 0.5])
    np.testing.assert_allclose(fuse_accel(cfg, [[-1, 0, 0], [1, 0, 0]]), ZERO, atol=1e-15)


def test_tangential_cancels():
    extr = pair()
    cfg = VimuConfig(extr, [0.5, 0.5], [0.5, 0.5])
    ys = [synth_accel(e, ZERO, ZERO, [0, 0, 2.0], NO_BIAS, ZERO) for e in extr]
    np.testing.assert_allclose(ys, [[0, 2, 0], [0, -2, 0]], atol=1e-15)
    np.testing.assert_allclose(fuse_accel(cfg, ys), ZERO, atol=1e-15)


@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_lever_arm_elimination_property(seed, n):
    rng = np.random.default_rng(seed)
    cfg = placement_config(random_rig(rng, n), rng.uniform(0.5, 2.0, n))
    a = rng.normal(0, 10, 3)
    w = rng.normal(size=3)
    w *= rng.uniform(0, 10) / np.linalg.norm(w)
    al = rng.normal(size=3)
    al *= rng.uniform(0, 20) / np.linalg.norm(al)
    ys = [synth_accel(e, a, w, al, NO_BIAS, ZERO) for e in cfg.extrinsics]
    np.testing.assert_allclose(fuse_accel(cfg, ys), a, rtol=0, atol=1e-10)
    gs = [synth_gyro(e, w, NO_BIAS, ZERO) for e in cfg.extrinsics]
    np.testing.assert_allclose(fuse_gyro(cfg, gs), w, rtol=0, atol=1e-12)


def test_frame_equivariance(rng):
    extr = random_rig(rng, 4)
    cfg = placement_config(extr)
    Q = random_rotation(rng)
    rotated = [ImuExtrinsics(Q @ e.C, Q @ e.r) for e in extr]
    cfg_q = VimuConfig(rotated, cfg.w_gyro, cfg.w_accel)
    ys = rng.normal(size=(4, 3))
    np.testing.assert_allclose(fuse_accel(cfg_q, ys), Q @ fuse_accel(cfg, ys), atol=1e-13)
    np.testing.assert_allclose(fuse_gyro(cfg_q, ys), Q @ fuse_gyro(cfg, ys), atol=1e-13)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_fused_noise_variance(n):
    rng = np.random.default_rng(n)
    sigma = 0.05
    extr = [ImuExtrinsics(random_rotation(rng), ZERO) for _ in range(n)]
    cfg = VimuConfig(extr, np.full(n, 1 / n), np.full(n, 1 / n))
    draws = sigma * rng.standard_normal((n, 1_000_000, 3))
    from vimu.fusion import _combine

    fused = _combine(cfg.w_gyro, cfg.rotations, draws)
    assert np.std(fused) == pytest.approx(sigma / np.sqrt(n), rel=0.05)


def test_fused_spec_equal_weights():
    n = 4
    spec = NoiseSpec(0.01, 0.1, 1e-4, 1e-3)
    cfg = VimuConfig([ImuExtrinsics()] * n, np.full(n, 0.25), np.full(n, 0.25))
    fused = fused_bias_spec(cfg, [spec] * n)
    np.testing.assert_allclose(fused.as_array()[:4], spec.as_array()[:4] / 2, rtol=1e-15)


def test_fused_spec_negative_weights():
    extr = [ImuExtrinsics()] * 3
    w = np.array([1.2, -0.1, -0.1])
    cfg = VimuConfig(extr, w, w)
    spec = NoiseSpec(0.01, 0.1, 1e-4, 1e-3)
    fused = fused_bias_spec(cfg, [spec] * 3)
    np.testing.assert_allclose(fused.as_array()[:4], spec.as_array()[:4] * np.sqrt(1.46),
                               rtol=1e-14)
    assert fused.sigma_g > spec.sigma_g


def test_fused_spec_single():
    spec = NoiseSpec(0.01, 0.1, 1e-4, 1e-3, 200.0)
    cfg = VimuConfig([ImuExtrinsics()], [1.0], [1.0])
    assert fused_bias_spec(cfg, [spec]) == spec


def test_debias():
    s = VimuSample(0.0, np.array([1.0, 2, 3]), np.array([4.0, 5, 6]))
    w, a = debias(s, BiasState())
    np.testing.assert_array_equal(w, s.gyro)
    b1 = BiasState(np.array([0.1, 0.2, 0.3]), np.array([1.0, 1, 1]))
    b2 = BiasState(np.array([0.5, 0, 0]), np.array([0, 2.0, 0]))
    w12, a12 = debias(s, BiasState(b1.b_g + b2.b_g, b1.b_a + b2.b_a))
    w1, a1 = debias(s, b1)
    w2, a2 = debias(VimuSample(0.0, w1, a1), b2)
    np.testing.assert_allclose(w12, w2, atol=1e-15)
    np.testing.assert_allclose(a12, a2, atol=1e-15)


def test_debias_recovers_truth(rng):
    extr = random_rig(rng, 3)
    cfg = placement_config(extr)
    w, a, al = rng.normal(size=(3, 3))
    biases = [BiasState(rng.normal(0, 0.01, 3), rng.normal(0, 0.1, 3)) for _ in extr]
    gy = [synth_gyro(e, w, b, ZERO) for e, b in zip(extr, biases)]
    ac = [synth_accel(e, a, w, al, b, ZERO) for e, b in zip(extr, biases)]
    sample = VimuSample(0.0, fuse_gyro(cfg, gy), fuse_accel(cfg, ac))
    # the combined bias is the fused per-IMU biases
    combined = BiasState(fuse_gyro(cfg, [b.b_g for b in biases]),
                         fuse_accel(cfg, [b.b_a for b in biases]))
    w_hat, a_hat = debias(sample, combined)
    np.testing.assert_allclose(w_hat, w, atol=1e-12)
    np.testing.assert_allclose(a_hat, a, atol=1e-12)


# ---------------------------------------------------------------- streams


def ramp_stream(t, slope=1.0, offset=0.0):
    y = np.outer(slope * t + offset, [1.0, -2.0, 0.5])
    return ImuStream(t, y, 2 * y)


def test_stream_identical_timestamps_match_per_tick(rng):
    extr = random_rig(rng, 3)
    cfg = placement_config(extr)
    t = np.arange(50) * 0.01
    streams = [ImuStream(t, rng.normal(size=(50, 3)), rng.normal(size=(50, 3))) for _ in extr]
    fused, stats = fuse_stream(cfg, streams)
    for k in range(50):
        np.testing.assert_array_equal(fused.gyro[k], fuse_gyro(cfg, [s.gyro[k] for s in streams]))
        np.testing.assert_array_equal(fused.accel[k],
                                      fuse_accel(cfg, [s.accel[k] for s in streams]))
    assert stats.samples_out == 50 and stats.samples_in == 150


def test_stream_half_period_offset_is_exact_on_ramp():
    cfg = VimuConfig([ImuExtrinsics()] * 2, [0.5, 0.5], [0.5, 0.5])
    t0 = np.arange(101) * 0.01
    t1 = t0 - 0.005
    fused, _ = fuse_stream(cfg, [ramp_stream(t0), ramp_stream(np.append(t1, 1.005))])
    np.testing.assert_allclose(fused.gyro, ramp_stream(fused.t).gyro, atol=1e-12)


def test_stream_mismatched_rates_count():
    cfg = VimuConfig([ImuExtrinsics()] * 2, [0.5, 0.5], [0.5, 0.5])
    t_ref = np.arange(0, 1001) / 100.0           # 0 .. 10 s at 100 Hz
    t_other = 0.25 + np.arange(0, 901) / 97.0    # 0.25 .. ~9.54 s at 97 Hz
    const = lambda t: ImuStream(t, np.tile([1.0, 2, 3], (len(t), 1)),
                                np.tile([4.0, 5, 6], (len(t), 1)))
    fused, stats = fuse_stream(cfg, [const(t_ref), const(t_other)])
    start, stop = t_other[0], t_other[-1]
    expected = int(np.floor(stop * 100) - np.ceil(start * 100) + 1)
    assert stats.samples_out == expected == len(fused)
    assert fused.t[0] >= start and fused.t[-1] <= stop
    np.testing.assert_allclose(fused.gyro, np.tile([1.0, 2, 3], (expected, 1)), rtol=1e-15)
    np.testing.assert_allclose(fused.accel, np.tile([4.0, 5, 6], (expected, 1)), rtol=1e-15)


def test_stream_gap_drops_ticks():
    cfg = VimuConfig([ImuExtrinsics()] * 2, [0.5, 0.5], [0.5, 0.5])
    t = np.arange(100) * 0.01
    gappy = np.concatenate([t[:40], t[60:]])
    fused, stats = fuse_stream(cfg, [ramp_stream(t), ramp_stream(gappy)])
    assert stats.dropped_gaps == 20  # ticks 0.40 .. 0.59
    assert len(fused) == 80


def test_stream_errors():
    cfg = VimuConfig([ImuExtrinsics()] * 2, [0.5, 0.5], [0.5, 0.5])
    a = ramp_stream(np.arange(10) * 0.01)
    b = ramp_stream(1.0 + np.arange(10) * 0.01)
    with pytest.raises(EmptyOverlap):
        fuse_stream(cfg, [a, b])
    bad = ImuStream([0.0, 0.02, 0.01], np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(NonMonotonicTimestamps):
        fuse_stream(cfg, [a, bad])
    with pytest.raises(LengthMismatch):
        fuse_stream(cfg, [a])


def test_stream_deterministic(rng):
    cfg = placement_config(random_rig(rng, 2))
    t = np.arange(30) * 0.01
    s = [ImuStream(t + 0.003 * j, rng.normal(size=(30, 3)), rng.normal(size=(30, 3)))
         for j in range(2)]
    f1, _ = fuse_stream(cfg, s)
    f2, _ = fuse_stream(cfg, s)
    assert np.array_equal(f1.gyro, f2.gyro) and np.array_equal(f1.accel, f2.accel)
