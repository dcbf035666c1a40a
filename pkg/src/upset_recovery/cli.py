"""Command-line entry point: ``python -m upset_recovery <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .allocator import Mode, ams_projection, unrecoverable_axis
from .config import load_config
from .harness import (
    ScenarioConfig,
    case_study_config,
    export_stats,
    export_trajectory,
    run_campaign,
    run_scenario,
)
from .vehicle import apply_failure

log = logging.getLogger("upset_recovery")


def _config(path) -> ScenarioConfig:
    return load_config(path) if path else ScenarioConfig()


def _print_metrics(metrics, elapsed: float) -> None:
    def fmt(v):
        return "none" if v is None else f"{v:.3f}"

    print(f"crashed               {metrics.crashed}")
    print(f"max_height_drop [m]   {metrics.max_height_drop:.3f}")
    print(f"attitude recovery [s] {fmt(metrics.attitude_recovery_time)}")
    print(f"full recovery [s]     {fmt(metrics.recovery_time)}")
    print(f"final pos. error [m]  {metrics.final_position_error:.3f}")
    print(f"min n_z               {metrics.min_n_z:.4f}")
    if metrics.error:
        print(f"error                 {metrics.error}")
    print(f"wall time [s]         {elapsed:.2f}")


def cmd_run(args) -> int:
    cfg = _config(args.config)
    if args.allocator:
        cfg = cfg.with_mode(args.allocator)
    t0 = time.perf_counter()
    traj, metrics = run_scenario(cfg)
    elapsed = time.perf_counter() - t0
    export_trajectory(traj, args.out)
    _print_metrics(metrics, elapsed)
    print(f"trajectory ({len(traj)} samples) written to {args.out}")
    return 0


def cmd_campaign(args) -> int:
    cfg = _config(args.config).with_mode(args.allocator)
    t0 = time.perf_counter()
    stats = run_campaign(cfg, args.n, parallelism=args.jobs, master_seed=args.seed)
    elapsed = time.perf_counter() - t0
    export_stats(stats, args.out)
    mean_rt = "none" if stats.mean_recovery_time is None else f"{stats.mean_recovery_time:.2f} s"
    print(f"{stats.n_flights} flights, allocator {args.allocator}, seed {args.seed}: "
          f"{stats.crash_count} crashed, {stats.recovered_count} recovered "
          f"(success rate {stats.success_rate:.3f})")
    print(f"height drop p50 {stats.drop_p50:.2f} m, p95 {stats.drop_p95:.2f} m, max {stats.drop_max:.2f} m; "
          f"mean recovery time {mean_rt}")
    print(f"wall time {elapsed:.1f} s; stats written to {args.out}")
    return 0


def cmd_ams(args) -> int:
    cfg = _config(args.config)
    params = cfg.vehicle
    if cfg.failed_rotor is not None:
        params = apply_failure(params, cfg.failed_rotor)
    label = "healthy" if cfg.failed_rotor is None else f"rotor {cfg.failed_rotor} failed"
    poly = ams_projection(params)
    print(f"# attainable (m_x, m_y) polygon [N m], {label}, counterclockwise")
    print("m_x,m_y")
    for x, y in poly:
        # round first so that tiny negative round-off does not print as -0.000000
        print(f"{round(x, 6) + 0.0:.6f},{round(y, 6) + 0.0:.6f}")
    if cfg.failed_rotor is not None:
        phi = unrecoverable_axis(params)
        print(f"# unrecoverable axis phi = [{phi[0]:.6f}, {phi[1]:.6f}]")
    return 0


def cmd_case_study(args) -> int:
    cfg = case_study_config(args.allocator)
    if args.duration:
        cfg = case_study_config(args.allocator, sim=type(cfg.sim)(duration=args.duration))
    t0 = time.perf_counter()
    traj, metrics = run_scenario(cfg)
    elapsed = time.perf_counter() - t0
    print(f"case study, allocator {args.allocator}: n0 = [-0.2, 0.2, 0.98], omega0 = [-15, 15, 0] rad/s, "
          f"rotor 4 failed")
    print(f"initial omega_tilde   {traj.omega_tilde[0]:.3f} rad/s")
    _print_metrics(metrics, elapsed)
    if args.out:
        export_trajectory(traj, args.out)
        print(f"trajectory written to {args.out}")
    else:
        stride = max(1, int(round(0.1 / cfg.sim.dt_control)))
        print("t,nz,omega_tilde,z")
        for i in range(0, len(traj), stride):
            print(f"{traj.t[i]:.2f},{traj.n_z[i]:+.4f},{traj.omega_tilde[i]:+.3f},{traj.position[i, 2]:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="upset-recovery", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings from the simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario and write its trajectory CSV")
    p.add_argument("--config", help="INI scenario file (defaults when omitted)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--allocator", choices=[m.value for m in Mode], help="override allocator.mode")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("campaign", help="Monte-Carlo campaign, statistics as JSON")
    p.add_argument("--config", help="INI scenario file (defaults when omitted)")
    p.add_argument("--n", type=int, default=200, help="number of flights")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--allocator", choices=[m.value for m in Mode], default="p2")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("ams", help="print the attainable roll/pitch moment polygon")
    p.add_argument("--config", help="INI scenario file (defaults when omitted)")
    p.set_defaults(func=cmd_ams)

    p = sub.add_parser("case-study", help="upside-down recovery preset with rotor 4 failed")
    p.add_argument("--allocator", choices=[m.value for m in Mode], default="p2")
    p.add_argument("--duration", type=float, default=None, help="simulated seconds (default 4)")
    p.add_argument("--out", help="optional trajectory CSV")
    p.set_defaults(func=cmd_case_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "n", 1) < 1 or getattr(args, "jobs", 1) < 1:
        print("error: --n and --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
