"""Error metrics and Monte-Carlo comparison of IMU configurations.

Within one seed every configuration sees the same trajectory, landmark draws
and pixel noise, and IMU slot ``j`` of every rig draws the same sensor noise,
so differences between configurations come from the rigs and weights alone.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from ._random import substream
from .fusion import VimuConfig, fuse_stream
from .imu_model import ImuStream, NoiseSpec
from .liekf import Estimate, initial_belief, run_filter
from .sim_world import (
    CameraModel,
    GroundTruth,
    LandmarkObs,
    default_trajectory,
    generate_ground_truth,
    group_frames,
    imu_catalog,
    synth_landmark_obs,
    synth_multi_imu,
)

log = logging.getLogger(__name__)

CONFIGS: dict[str, tuple[int, ...]] = {
    "S0": (0,),
    "S2": (1, 2),
    "S4": (1, 2, 3, 4),
    "S6": (1, 2, 3, 4, 5, 6),
    "A2": (11, 12),
    "A4": (11, 12, 13, 14),
    "A6": (11, 12, 13, 14, 15, 16),
}


class TimestampMismatch(ValueError):
    pass


class EmptySeries(ValueError):
    pass


@dataclass
class ErrorSeries:
    t: NDArray[np.float64]
    rot: NDArray[np.float64]
    pos: NDArray[np.float64]


@dataclass(frozen=True)
class RunSummary:
    config: str
    seed: int
    rot_mae: float
    rot_rmse: float
    pos_mae: float
    pos_rmse: float
    wall_time: float = 0.0


def rotation_angle(R: NDArray[np.float64]) -> NDArray[np.float64]:
    """Angle of each rotation in a ``(..., 3, 3)`` stack; equals ``|so3_log(R)|``."""
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm(
        np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0],
                  R[..., 1, 0] - R[..., 0, 1]], axis=-1), axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c)


def compute_errors(est: Estimate, gt: GroundTruth) -> ErrorSeries:
    """Axis-angle rotation error (rad) and position error (m) at each estimate time."""
    idx = np.searchsorted(gt.t, est.t - 1e-9)
    if np.any(idx >= len(gt.t)) or np.any(np.abs(gt.t[np.minimum(idx, len(gt.t) - 1)] - est.t) > 1e-9):
        raise TimestampMismatch("estimate timestamps are not a subset of the ground truth")
    rel = np.einsum("kji,kjl->kil", gt.C[idx], est.C)
    rot = rotation_angle(rel)
    pos = np.linalg.norm(est.p - gt.p[idx], axis=1)
    return ErrorSeries(est.t.copy(), rot, pos)


def summarize(errs: ErrorSeries, config: str = "", seed: int = 0,
              wall_time: float = 0.0) -> RunSummary:
    if len(errs.rot) == 0:
        raise EmptySeries("cannot summarize an empty error series")
    return RunSummary(
        config=config,
        seed=seed,
        rot_mae=float(np.mean(np.abs(errs.rot))),
        rot_rmse=float(np.sqrt(np.mean(errs.rot**2))),
        pos_mae=float(np.mean(np.abs(errs.pos))),
        pos_rmse=float(np.sqrt(np.mean(errs.pos**2))),
        wall_time=wall_time,
    )


@dataclass(frozen=True)
class Scenario:
    """Everything except the seed that defines a simulated experiment."""

    duration: float = 120.0
    imu_rate_hz: float = 100.0
    camera_rate_hz: float = 2.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    turn_on_bias: tuple[float, float] = (2e-3, 2e-2)
    camera: CameraModel = field(default_factory=CameraModel)
    rig_seed: int = 0
    imu_offset: float = 1.0
    imu_perturb: tuple[float, float] = (0.1, 0.2)
    gyro_weights: str = "placement"
    init_sigma: tuple[float, float, float] = (0.01, 0.05, 0.05)

    def rig(self, config: str) -> list:
        catalog = imu_catalog(self.rig_seed, self.imu_offset, self.imu_perturb)
        if config not in CONFIGS:
            raise KeyError(f"unknown configuration {config!r}; choose from {sorted(CONFIGS)}")
        return [(catalog[i], self.noise) for i in CONFIGS[config]]


@dataclass
class World:
    seed: int
    gt: GroundTruth
    obs: list[LandmarkObs]


def make_world(scenario: Scenario, seed: int) -> World:
    traj = default_trajectory(scenario.duration, substream(seed, "world"))
    gt = generate_ground_truth(traj, scenario.imu_rate_hz)
    obs = synth_landmark_obs(gt, scenario.camera, scenario.camera_rate_hz,
                             substream(seed, "camera"))
    return World(seed, gt, obs)


@dataclass
class RunResult:
    summary: RunSummary
    vimu: VimuConfig
    streams: list[ImuStream]
    fused: ImuStream
    estimate: Estimate
    errors: ErrorSeries


def run_config(scenario: Scenario, world: World, config: str) -> RunResult:
    """Synthesize, fuse, filter and score one configuration in one world."""
    start = time.perf_counter()
    rig = scenario.rig(config)
    streams = synth_multi_imu(world.gt, rig, world.seed, scenario.turn_on_bias)
    vimu = VimuConfig.build([e for e, _ in rig], [s for _, s in rig],
                            gyro_weights=scenario.gyro_weights)
    fused, _ = fuse_stream(vimu, streams)

    gt = world.gt
    bias_g0 = float(np.sqrt(np.sum((vimu.w_gyro * scenario.turn_on_bias[0]) ** 2)))
    bias_a0 = float(np.sqrt(np.sum((vimu.w_accel * scenario.turn_on_bias[1]) ** 2)))
    belief = initial_belief(
        gt.C[0], gt.v[0], gt.p[0], *scenario.init_sigma,
        sigma_bg=max(bias_g0, 1e-6), sigma_ba=max(bias_a0, 1e-6),
    )
    est = run_filter(fused, group_frames(world.obs), scenario.camera, vimu.fused_noise,
                     belief, gt.gravity)
    errs = compute_errors(est, gt)
    summary = summarize(errs, config, world.seed, time.perf_counter() - start)
    return RunResult(summary, vimu, streams, fused, est, errs)


def _run_seed(args) -> list[RunSummary]:
    scenario, seed, configs, series_dir = args
    world = make_world(scenario, seed)
    out = []
    for c in configs:
        res = run_config(scenario, world, c)
        if series_dir is not None:
            from .io_formats import write_errors

            write_errors(Path(series_dir) / f"errors_{c}_seed{seed}.csv", res.errors)
        out.append(res.summary)
    return out


def run_experiment(
    scenario: Scenario,
    configs: Sequence[str] = tuple(CONFIGS),
    n_seeds: int = 20,
    first_seed: int = 0,
    workers: int = 1,
    series_dir: str | Path | None = None,
) -> list[RunSummary]:
    """
    Run every configuration for seeds ``first_seed .. first_seed + n_seeds - 1``.

    Seeds are independent and run in a process pool when ``workers > 1``;
    the result order (seed-major, then ``configs``) does not depend on it.
    With ``series_dir`` every run also writes its error series there.
    """
    jobs = [(scenario, s, tuple(configs), series_dir) for s in range(first_seed, first_seed + n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_run_seed, jobs))
    else:
        chunks = [_run_seed(j) for j in jobs]
    return [s for chunk in chunks for s in chunk]


def table(summaries: Iterable[RunSummary]) -> dict[str, dict[str, float]]:
    """Per-configuration means of the four metrics."""
    by: dict[str, list[RunSummary]] = {}
    for s in summaries:
        by.setdefault(s.config, []).append(s)
    out = {}
    for name, rows in by.items():
        out[name] = {
            key: float(np.mean([getattr(r, key) for r in rows]))
            for key in ("rot_mae", "rot_rmse", "pos_mae", "pos_rmse")
        }
        out[name]["n_seeds"] = len(rows)
    return out


# (better, worse, strict): mean MAE of `worse` must exceed that of `better`
TREND_ORDERINGS = (
    ("S2", "S0", True),
    ("S4", "S2", True),
    ("S6", "S4", True),
    ("S2", "A2", False),
    ("S4", "A4", False),
    ("S6", "A6", False),
)


@dataclass
class TrendReport:
    n_seeds: int
    n_boot: int
    means: dict[str, dict[str, float]]
    observed: dict[str, bool]
    fractions: dict[str, float]
    joint_fraction: float
    threshold: float = 0.9

    @property
    def passed(self) -> bool:
        return all(self.observed.values()) and self.joint_fraction >= self.threshold

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _check(mat: dict[str, NDArray[np.float64]], better: str, worse: str, strict: bool):
    if strict:
        return mat[worse] > mat[better]
    return mat[worse] >= mat[better]


def bootstrap_trends(
    summaries: Sequence[RunSummary],
    n_boot: int = 1000,
    seed: int = 0,
    threshold: float = 0.9,
    metrics: Sequence[str] = ("rot_mae", "pos_mae"),
) -> TrendReport:
    """
    Check the configuration orderings on the seed means and on ``n_boot``
    paired bootstrap resamples of the seeds.

    Each resample draws seeds with replacement and applies the same draw to
    every configuration.
    """
    seeds = sorted({s.seed for s in summaries})
    index = {s: i for i, s in enumerate(seeds)}
    configs = sorted({s.config for s in summaries})
    data = {(c, m): np.full(len(seeds), np.nan) for c in configs for m in metrics}
    for s in summaries:
        for m in metrics:
            data[(s.config, m)][index[s.seed]] = getattr(s, m)

    orderings = [o for o in TREND_ORDERINGS if o[0] in configs and o[1] in configs]
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(seeds), size=(n_boot, len(seeds)))

    observed = {}
    fractions = {}
    joint = np.ones(n_boot, dtype=bool)
    for m in metrics:
        full = {c: np.mean(data[(c, m)]) for c in configs}
        boot = {c: data[(c, m)][draws].mean(axis=1) for c in configs}
        for better, worse, strict in orderings:
            key = f"{m}: {worse} {'>' if strict else '>='} {better}"
            observed[key] = bool(_check(full, better, worse, strict))
            ok = _check(boot, better, worse, strict)
            fractions[key] = float(np.mean(ok))
            joint &= ok
    return TrendReport(
        n_seeds=len(seeds),
        n_boot=n_boot,
        means=table(summaries),
        observed=observed,
        fractions=fractions,
        joint_fraction=float(np.mean(joint)),
        threshold=threshold,
    )


def fused_noise_std(fused: ImuStream, gt: GroundTruth, vimu: VimuConfig,
                    streams: Sequence[ImuStream]) -> tuple[float, float]:
    """
    Per-axis std of the white noise left in a fused stream after removing
    the true motion and the true combined biases: ``(gyro, accel)``.
    Requires simulated streams carrying bias histories.
    """
    Cs = vimu.rotations
    b_g = sum(w * (s.bias_g @ C.T) for w, C, s in zip(vimu.w_gyro, Cs, streams))
    b_a = sum(w * (s.bias_a @ C.T) for w, C, s in zip(vimu.w_accel, Cs, streams))
    idx = np.searchsorted(gt.t, fused.t - 1e-9)
    n_g = fused.gyro - gt.omega[idx] - b_g[idx]
    n_a = fused.accel - gt.a_body[idx] - b_a[idx]
    return float(np.std(n_g)), float(np.std(n_a))
