"""Command-line entry point: ``vimu <subcommand> ...``.

Exit codes: 0 success, 1 usage, parse or validation error, 2 infeasible
placement or no common time window, 3 a requested check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evalkit, io_formats
from .fusion import (
    EmptyOverlap,
    FuseStats,
    LengthMismatch,
    NonMonotonicTimestamps,
    SyncPolicy,
    VimuConfig,
    fuse_stream,
)
from .io_formats import ParseError, Report, ValidationError
from .sim_world import synth_multi_imu
from .weight_solver import (
    Infeasible,
    WeightProblem,
    diagnose_weights,
    solve_noise_only_weights,
    solve_placement_weights,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_CHECK_FAILED = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _vec3(text: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return v


def _config_list(text: str) -> list[str]:
    names = list(evalkit.CONFIGS) if text == "all" else text.split(",")
    bad = [n for n in names if n not in evalkit.CONFIGS]
    if bad:
        raise argparse.ArgumentTypeError(
            f"unknown configuration(s) {bad}; choose from {list(evalkit.CONFIGS)} or 'all'"
        )
    return names


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=d if suppress else 0,
                   help="base random seed (default 0)")
    p.add_argument("--config", "--scenario", dest="config", default=d if suppress else None,
                   help="rig file (solve-weights, fuse) or scenario file (synth, "
                        "simulate, evaluate)")
    p.add_argument("--out", default=d if suppress else None,
                   help="output file or directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vimu", description="Virtual IMU fusion toolkit.")
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("solve-weights", help="solve fusion weights for a rig file")
    _add_common(p, suppress=True)
    p.add_argument("--target", type=_vec3, help="VIMU placement x,y,z in the rig frame "
                   "(default: the file's target)")
    p.add_argument("--noise-only", action="store_true",
                   help="inverse-variance accelerometer weights, ignoring placement")
    p.add_argument("--gyro-weights", choices=("noise", "placement"), default="noise",
                   help="gyro weighting (default noise)")

    p = sub.add_parser("synth", help="simulate one world and the IMU streams of one rig")
    _add_common(p, suppress=True)
    p.add_argument("--imus", default="S4", help="configuration name (default S4)")

    p = sub.add_parser("fuse", help="fuse a multi-IMU stream file into a VIMU stream")
    _add_common(p, suppress=True)
    p.add_argument("--in", dest="inp", required=True, help="multi-IMU stream CSV")
    p.add_argument("--gyro-weights", choices=("noise", "placement"), default="noise",
                   help="gyro weighting (default noise)")
    p.add_argument("--max-gap", type=float, default=SyncPolicy().max_gap_periods,
                   help="drop ticks whose interpolation gap exceeds this many periods")

    for name, helptext in (
        ("simulate", "run configurations and write every intermediate artifact"),
        ("evaluate", "run the Monte-Carlo comparison and write summaries"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p, suppress=True)
        p.add_argument("--imus", type=_config_list,
                       default=["S4"] if name == "simulate" else list(evalkit.CONFIGS),
                       help="comma-separated configuration names or 'all'")
        p.add_argument("--seeds", type=_positive_int, default=1 if name == "simulate" else 20,
                       help="number of seeds, starting at --seed")
        p.add_argument("--workers", type=_positive_int, default=1,
                       help="worker processes over seeds (default 1)")
        if name == "evaluate":
            p.add_argument("--assert-trends", action="store_true",
                           help="exit 3 unless the configuration orderings hold")
            p.add_argument("--n-boot", type=_positive_int, default=1000,
                           help="bootstrap resamples (default 1000)")
            p.add_argument("--series", action="store_true",
                           help="also write each run's error series CSV")

    p = sub.add_parser("check-jacobians",
                       help="compare filter Jacobians with finite differences")
    _add_common(p, suppress=True)
    p.add_argument("--cases", type=_positive_int, default=100,
                   help="random states to check (default 100)")
    p.add_argument("--tol", type=float, default=1e-5,
                   help="maximum relative deviation (default 1e-5)")
    return parser


# ---------------------------------------------------------------- helpers


def _need(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    return Path(path)


def _scenario(path: str | None) -> evalkit.Scenario:
    if path is None:
        return evalkit.Scenario()
    if not Path(path).is_file():
        raise UsageError(f"scenario file not found: {path}")
    return io_formats.read_scenario(path)


def _weights(positions, sigmas, mode):
    if mode == "noise":
        return solve_noise_only_weights(sigmas, positions)
    return solve_placement_weights(WeightProblem(positions, sigmas))


def _report(config: str, scenario: evalkit.Scenario,
            summaries: Sequence[evalkit.RunSummary]) -> Report:
    rig = scenario.rig(config)
    vimu = VimuConfig.build([e for e, _ in rig], [s for _, s in rig],
                            gyro_weights=scenario.gyro_weights)
    mean = evalkit.table(summaries)[config]
    return Report(
        config=config,
        seeds=[s.seed for s in summaries],
        rot_mae=mean["rot_mae"],
        rot_rmse=mean["rot_rmse"],
        pos_mae=mean["pos_mae"],
        pos_rmse=mean["pos_rmse"],
        fused_sigma={"gyro": vimu.fused_noise.sigma_g, "accel": vimu.fused_noise.sigma_a},
        weights_gyro=vimu.w_gyro.tolist(),
        weights_accel=vimu.w_accel.tolist(),
    )


def _print_weights(label: str, sol) -> None:
    diag = diagnose_weights(sol.weights)
    print(f"{label} weights: " + " ".join(f"{w:.10g}" for w in sol.weights))
    print(f"{label} fused sigma: {sol.fused_sigma:.10g}")
    print(f"{label} sum w^2: {diag.weight_norm_sq:.10g}"
          + ("  (noise amplified)" if diag.amplifies_noise else ""))


# ---------------------------------------------------------------- commands


def cmd_solve_weights(args) -> int:
    rig = io_formats.read_rig(_need(args.config, "config"))
    target = rig.target if args.target is None else args.target
    positions = np.array([e.r for e in rig.extrinsics]) - target
    sigma_g = np.array([s.sigma_g for s in rig.noises])
    sigma_a = np.array([s.sigma_a for s in rig.noises])
    try:
        gyro = _weights(positions, sigma_g, args.gyro_weights)
        accel = _weights(positions, sigma_a, "noise" if args.noise_only else "placement")
    except Infeasible as exc:
        print(f"infeasible: target {target.tolist()} is not in the affine span of the "
              f"IMU positions; nearest residual {exc.residual.tolist()} "
              f"(norm {np.linalg.norm(exc.residual):.6g} m)", file=sys.stderr)
        return EXIT_INFEASIBLE

    print("ids: " + " ".join(str(i) for i in rig.ids))
    _print_weights("gyro", gyro)
    _print_weights("accel", accel)
    resid = accel.placement_residual
    print("placement residual: " + " ".join(f"{x:.3g}" for x in resid))
    if args.out:
        doc = {
            "ids": rig.ids,
            "target": target.tolist(),
            "weights_gyro": gyro.weights.tolist(),
            "weights_accel": accel.weights.tolist(),
            "fused_sigma": {"gyro": gyro.fused_sigma, "accel": accel.fused_sigma},
            "placement_residual": resid.tolist(),
            "sum_w2": {"gyro": gyro.weight_norm_sq, "accel": accel.weight_norm_sq},
            "amplifies_noise": {"gyro": gyro.amplifies_noise, "accel": accel.amplifies_noise},
        }
        io_formats.atomic_write_text(args.out, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    scenario = _scenario(args.config)
    out = _need(args.out, "out")
    config = args.imus
    if config not in evalkit.CONFIGS:
        raise UsageError(f"unknown configuration {config!r}")
    world = evalkit.make_world(scenario, args.seed)
    rig = scenario.rig(config)
    streams = synth_multi_imu(world.gt, rig, args.seed, scenario.turn_on_bias)
    ids = list(evalkit.CONFIGS[config])
    io_formats.write_ground_truth(out / "ground_truth.csv", world.gt)
    io_formats.write_landmarks(out / "landmarks.csv", world.obs)
    io_formats.write_stream(out / "streams.csv", dict(zip(ids, streams)))
    io_formats.write_rig(out / "rig.yaml", io_formats.RigConfig(
        ids, [e for e, _ in rig], [s for _, s in rig], np.zeros(3), scenario.camera))
    return EXIT_OK


def cmd_fuse(args) -> int:
    rig = io_formats.read_rig(_need(args.config, "config"))
    out = _need(args.out, "out")
    streams = io_formats.read_stream(args.inp)
    if set(streams) != set(rig.ids):
        raise UsageError(f"stream ids {sorted(streams)} do not match rig ids {sorted(rig.ids)}")
    cfg = VimuConfig.build(rig.centered(), rig.noises, gyro_weights=args.gyro_weights)
    fused, stats = fuse_stream(cfg, [streams[i] for i in rig.ids],
                               SyncPolicy(max_gap_periods=args.max_gap))
    io_formats.write_vimu(out, fused)
    _print_stats(stats)
    return EXIT_OK


def _print_stats(stats: FuseStats) -> None:
    print(f"fuse: samples_in={stats.samples_in} samples_out={stats.samples_out} "
          f"dropped_gaps={stats.dropped_gaps}", file=sys.stderr)


def cmd_simulate(args) -> int:
    scenario = _scenario(args.config)
    out = _need(args.out, "out")
    by_config: dict[str, list[evalkit.RunSummary]] = {c: [] for c in args.imus}
    for seed in range(args.seed, args.seed + args.seeds):
        stage = "world"
        try:
            world = evalkit.make_world(scenario, seed)
            sdir = out / f"seed{seed}"
            io_formats.write_ground_truth(sdir / "ground_truth.csv", world.gt)
            io_formats.write_landmarks(sdir / "landmarks.csv", world.obs)
            for config in args.imus:
                stage = f"{config}"
                res = evalkit.run_config(scenario, world, config)
                cdir = sdir / config
                ids = list(evalkit.CONFIGS[config])
                io_formats.write_stream(cdir / "streams.csv", dict(zip(ids, res.streams)))
                io_formats.write_vimu(cdir / "fused.csv", res.fused)
                io_formats.write_estimate(cdir / "estimate.csv", res.estimate)
                io_formats.write_errors(cdir / "errors.csv", res.errors)
                by_config[config].append(res.summary)
        except (OSError, ValueError, ArithmeticError) as exc:
            raise UsageError(f"seed {seed}, stage {stage}: {exc}") from exc
    reports = [_report(c, scenario, rows) for c, rows in by_config.items()]
    io_formats.write_report(out / "summary.json", reports)
    for r in reports:
        print(f"{r.config}: rot_mae={r.rot_mae:.6g} pos_mae={r.pos_mae:.6g}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    scenario = _scenario(args.config)
    out = _need(args.out, "out")
    series = out / "series" if args.series else None
    summaries = evalkit.run_experiment(scenario, args.imus, args.seeds, args.seed,
                                       args.workers, series_dir=series)
    reports = [
        _report(c, scenario, [s for s in summaries if s.config == c]) for c in args.imus
    ]
    io_formats.write_report(out / "summary.json", reports)
    rows = np.array([[s.seed, s.rot_mae, s.rot_rmse, s.pos_mae, s.pos_rmse]
                     for s in summaries])
    lines = ["config,seed,rot_mae,rot_rmse,pos_mae,pos_rmse"]
    for s, row in zip(summaries, rows):
        lines.append(",".join([s.config, str(s.seed), *(io_formats.fmt(x) for x in row[1:])]))
    io_formats.atomic_write_text(out / "runs.csv", "\n".join(lines) + "\n")

    trends = evalkit.bootstrap_trends(summaries, n_boot=args.n_boot, seed=args.seed)
    io_formats.atomic_write_text(out / "trends.json",
                                 json.dumps(trends.as_dict(), indent=2) + "\n")
    for key, frac in trends.fractions.items():
        print(f"{key}: observed={trends.observed[key]} bootstrap={frac:.3f}")
    print(f"joint bootstrap fraction {trends.joint_fraction:.3f}; "
          f"trends {'hold' if trends.passed else 'FAIL'}")
    if args.assert_trends and not trends.passed:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_check_jacobians(args) -> int:
    from .liekf import jacobian_check, random_check_case

    worst_p = worst_m = 0.0
    for i in range(args.cases):
        belief, sample, obs = random_check_case(args.seed + i)
        rep = jacobian_check(belief, sample, obs)
        worst_p = max(worst_p, rep.max_rel_propagation)
        worst_m = max(worst_m, rep.max_rel_measurement)
    ok = max(worst_p, worst_m) <= args.tol
    print(f"cases: {args.cases}")
    print(f"max relative deviation, transition: {worst_p:.3g}")
    print(f"max relative deviation, measurement: {worst_m:.3g}")
    print("PASS" if ok else f"FAIL (tolerance {args.tol:g})")
    if args.out:
        io_formats.atomic_write_text(args.out, json.dumps({
            "cases": args.cases, "seed": args.seed, "tol": args.tol,
            "max_rel_transition": worst_p, "max_rel_measurement": worst_m, "passed": ok,
        }, indent=2) + "\n")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


COMMANDS = {
    "solve-weights": cmd_solve_weights,
    "synth": cmd_synth,
    "fuse": cmd_fuse,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "check-jacobians": cmd_check_jacobians,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (Infeasible, EmptyOverlap) as exc:
        print(f"vimu {args.command}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except FileNotFoundError as exc:
        print(f"vimu {args.command}: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ParseError, ValidationError, NonMonotonicTimestamps,
            LengthMismatch) as exc:
        print(f"vimu {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
