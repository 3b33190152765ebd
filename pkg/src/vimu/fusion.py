"""Weighted averaging of several IMUs into one virtual IMU (VIMU).

Each reading is rotated into the VIMU frame and averaged. When the
accelerometer weights satisfy ``sum(w_j r_j) == 0`` the centripetal and
tangential lever-arm terms cancel, so the averaged accelerometer behaves as if
it were mounted at the VIMU origin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .imu_model import BiasState, ImuExtrinsics, ImuStream, NoiseSpec
from .weight_solver import (
    WeightProblem,
    placement_of,
    solve_noise_only_weights,
    solve_placement_weights,
)

log = logging.getLogger(__name__)

SUM_TOL = 1e-10
PLACEMENT_TOL = 1e-8


class LengthMismatch(ValueError):
    pass


class EmptyOverlap(ValueError):
    pass


class NonMonotonicTimestamps(ValueError):
    pass


@dataclass(frozen=True)
class VimuSample:
    t: float
    gyro: NDArray[np.float64]
    accel: NDArray[np.float64]


@dataclass(frozen=True)
class VimuConfig:
    """
    Extrinsics plus the weights used to average gyros and accelerometers.

    ``w_accel`` must put the VIMU at the origin of the extrinsics' frame,
    otherwise lever-arm terms leak into the fused accelerometer.
    """

    extrinsics: tuple[ImuExtrinsics, ...]
    w_gyro: NDArray[np.float64]
    w_accel: NDArray[np.float64]
    fused_noise: NoiseSpec | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "extrinsics", tuple(self.extrinsics))
        w_gyro = np.asarray(self.w_gyro, dtype=float)
        w_accel = np.asarray(self.w_accel, dtype=float)
        n = len(self.extrinsics)
        if w_gyro.shape != (n,) or w_accel.shape != (n,):
            raise LengthMismatch(f"expected {n} gyro and accel weights")
        for name, w in (("gyro", w_gyro), ("accel", w_accel)):
            if abs(w.sum() - 1.0) > SUM_TOL:
                raise ValueError(f"{name} weights sum to {w.sum()!r}, not 1")
        residual = placement_of(w_accel, self.positions)
        if np.linalg.norm(residual) > PLACEMENT_TOL:
            raise ValueError(
                f"accel weights leave a lever arm of {residual} m; "
                "solve them with solve_placement_weights"
            )
        object.__setattr__(self, "w_gyro", w_gyro)
        object.__setattr__(self, "w_accel", w_accel)

    @property
    def positions(self) -> NDArray[np.float64]:
        return np.array([e.r for e in self.extrinsics]).reshape(-1, 3)

    @property
    def rotations(self) -> NDArray[np.float64]:
        return np.array([e.C for e in self.extrinsics]).reshape(-1, 3, 3)

    @classmethod
    def build(
        cls,
        extrinsics: Sequence[ImuExtrinsics],
        noises: Sequence[NoiseSpec],
        gyro_weights: str = "noise",
        accel_weights: str = "placement",
    ) -> VimuConfig:
        """
        Solve the weights for a rig whose positions are relative to the VIMU.

        ``gyro_weights`` and ``accel_weights`` each select ``"noise"``
        (inverse variance) or ``"placement"`` (minimum noise with the VIMU at
        the origin). Accelerometer weights must use ``"placement"`` unless the
        inverse-variance weights happen to cancel the lever arms.
        """
        extrinsics = tuple(extrinsics)
        positions = np.array([e.r for e in extrinsics])

        def solve(mode: str, sigmas: NDArray[np.float64]) -> NDArray[np.float64]:
            if mode == "noise":
                return solve_noise_only_weights(sigmas, positions).weights
            if mode == "placement":
                return solve_placement_weights(WeightProblem(positions, sigmas)).weights
            raise ValueError(f"unknown weighting mode {mode!r}")

        w_gyro = solve(gyro_weights, np.array([s.sigma_g for s in noises]))
        w_accel = solve(accel_weights, np.array([s.sigma_a for s in noises]))
        cfg = cls(extrinsics, w_gyro, w_accel)
        return cls(extrinsics, w_gyro, w_accel, fused_bias_spec(cfg, noises))


def _combine(
    weights: NDArray[np.float64], rotations: NDArray[np.float64], readings: NDArray[np.float64]
) -> NDArray[np.float64]:
    """``sum_j w_j C_j y_j`` for ``readings`` of shape ``(n_imu, K, 3)``."""
    # elementwise rather than matmul: identical bits for any K
    out = np.zeros(readings.shape[1:])
    for w, C, y in zip(weights, rotations, readings):
        aligned = y[:, 0:1] * C[:, 0] + y[:, 1:2] * C[:, 1] + y[:, 2:3] * C[:, 2]
        out += w * aligned
    return out


def _readings(cfg: VimuConfig, readings: Sequence[ArrayLike]) -> NDArray[np.float64]:
    arr = np.asarray(readings, dtype=float)
    if arr.shape[0] != len(cfg.extrinsics):
        raise LengthMismatch(
            f"got {arr.shape[0]} readings for {len(cfg.extrinsics)} IMUs"
        )
    return arr.reshape(len(cfg.extrinsics), -1, 3)


def fuse_gyro(cfg: VimuConfig, readings: Sequence[ArrayLike]) -> NDArray[np.float64]:
    """Weighted average of the gyro readings, aligned to the VIMU frame."""
    return _combine(cfg.w_gyro, cfg.rotations, _readings(cfg, readings))[0]


def fuse_accel(cfg: VimuConfig, readings: Sequence[ArrayLike]) -> NDArray[np.float64]:
    """Weighted average of the accelerometer readings, aligned to the VIMU frame."""
    return _combine(cfg.w_accel, cfg.rotations, _readings(cfg, readings))[0]


def _fused(weights: NDArray[np.float64], sigmas: Sequence[float]) -> float:
    return float(np.sqrt(np.sum((weights * np.asarray(sigmas)) ** 2)))


def fused_bias_spec(cfg: VimuConfig, specs: Sequence[NoiseSpec]) -> NoiseSpec:
    """
    Noise and drift of the fused IMU: ``sqrt(sum((w_j sigma_j)^2))`` per
    channel, gyro channels with the gyro weights and accelerometer channels
    with the accelerometer weights. The rate is that of the first IMU.
    """
    if len(specs) != len(cfg.extrinsics):
        raise LengthMismatch(f"got {len(specs)} specs for {len(cfg.extrinsics)} IMUs")
    return NoiseSpec(
        sigma_g=_fused(cfg.w_gyro, [s.sigma_g for s in specs]),
        sigma_a=_fused(cfg.w_accel, [s.sigma_a for s in specs]),
        sigma_bg=_fused(cfg.w_gyro, [s.sigma_bg for s in specs]),
        sigma_ba=_fused(cfg.w_accel, [s.sigma_ba for s in specs]),
        rate_hz=specs[0].rate_hz,
    )


def debias(
    sample: VimuSample, bias_estimate: BiasState
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Subtract the estimated combined biases from a fused sample."""
    return (
        np.asarray(sample.gyro) - bias_estimate.b_g,
        np.asarray(sample.accel) - bias_estimate.b_a,
    )


@dataclass(frozen=True)
class SyncPolicy:
    """
    Resampling of all streams onto the timeline of stream 0.

    A reference tick is dropped when any other stream's bracketing samples
    are further apart than ``max_gap_periods`` times that stream's nominal
    (median) period.
    """

    max_gap_periods: float = 3.0


@dataclass
class FuseStats:
    samples_in: int = 0
    samples_out: int = 0
    dropped_gaps: int = 0
    per_stream_in: list[int] = field(default_factory=list)


def _interpolate(
    stream: ImuStream, t: NDArray[np.float64], max_gap: float
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
    ts = stream.t
    if len(ts) == 1:
        ok = t == ts[0]
        return (
            np.repeat(stream.gyro, len(t), axis=0),
            np.repeat(stream.accel, len(t), axis=0),
            ok,
        )
    k = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2)
    span = ts[k + 1] - ts[k]
    lam = ((t - ts[k]) / span)[:, None]
    gyro = (1.0 - lam) * stream.gyro[k] + lam * stream.gyro[k + 1]
    accel = (1.0 - lam) * stream.accel[k] + lam * stream.accel[k + 1]
    exact = t == ts[k]
    ok = exact | (span <= max_gap)
    # exact hits must not pick up round-off from the blend
    gyro[exact] = stream.gyro[k[exact]]
    accel[exact] = stream.accel[k[exact]]
    return gyro, accel, ok


def fuse_stream(
    cfg: VimuConfig,
    streams: Sequence[ImuStream],
    sync: SyncPolicy | None = None,
) -> tuple[ImuStream, FuseStats]:
    """
    Fuse per-IMU streams into one VIMU stream on the timeline of stream 0.

    Only reference ticks inside the common time window of all streams are
    emitted. Other streams are linearly interpolated onto those ticks.

    Returns
    -------
    fused: ImuStream
        The VIMU stream (VIMU frame).
    stats: FuseStats
        Sample counts, including ticks dropped for oversized gaps.
    """
    sync = sync or SyncPolicy()
    if len(streams) != len(cfg.extrinsics):
        raise LengthMismatch(f"got {len(streams)} streams for {len(cfg.extrinsics)} IMUs")
    for j, s in enumerate(streams):
        if not s.is_strictly_increasing():
            bad = int(np.argmax(np.diff(s.t) <= 0.0)) + 1
            raise NonMonotonicTimestamps(f"stream {j}: timestamp {bad} does not increase")
        if len(s) == 0:
            raise EmptyOverlap(f"stream {j} is empty")

    start = max(s.t[0] for s in streams)
    stop = min(s.t[-1] for s in streams)
    ref = streams[0]
    sel = (ref.t >= start) & (ref.t <= stop)
    if start > stop or not np.any(sel):
        raise EmptyOverlap(f"streams share no time window (start {start}, end {stop})")
    t = ref.t[sel]

    gyros = [ref.gyro[sel]]
    accels = [ref.accel[sel]]
    keep = np.ones(len(t), dtype=bool)
    for s in streams[1:]:
        period = float(np.median(np.diff(s.t))) if len(s) > 1 else np.inf
        g, a, ok = _interpolate(s, t, sync.max_gap_periods * period)
        gyros.append(g)
        accels.append(a)
        keep &= ok

    stats = FuseStats(
        samples_in=sum(len(s) for s in streams),
        per_stream_in=[len(s) for s in streams],
    )
    stats.dropped_gaps = int(np.count_nonzero(~keep))
    if stats.dropped_gaps:
        log.warning("dropped %d ticks with interpolation gaps", stats.dropped_gaps)

    rotations = cfg.rotations
    gyro = _combine(cfg.w_gyro, rotations, np.array(gyros)[:, keep])
    accel = _combine(cfg.w_accel, rotations, np.array(accels)[:, keep])
    stats.samples_out = int(np.count_nonzero(keep))
    return ImuStream(t[keep], gyro, accel), stats
