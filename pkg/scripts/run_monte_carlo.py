#!/usr/bin/env python3
"""Monte-Carlo comparison of the two allocators on identical initial conditions.

Usage: python scripts/run_monte_carlo.py [--n 200] [--seed 0] [--jobs 1] [--out-dir DIR] [--config FILE]

Writes mc_p1.json and mc_p2.json (same format as the ``campaign`` subcommand)
and prints crash counts, height-drop percentiles and the number of flights
whose drop exceeds 10 m and 30 m.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from upset_recovery.config import load_config
from upset_recovery.harness import ScenarioConfig, export_stats, run_campaign


def summary(stats):
    drops = np.array([f["max_height_drop"] for f in stats.flights])
    crashed = np.array([f["crashed"] for f in stats.flights])
    rec = np.array([f["recovery_time"] is not None and not f["crashed"] for f in stats.flights])
    under10 = float(np.mean(drops[rec] < 10)) if rec.any() else float("nan")
    return (f"crashes {stats.crash_count:3d}  recovered {stats.recovered_count:3d}  "
            f"drop p50 {stats.drop_p50:6.2f}  p95 {stats.drop_p95:6.2f}  "
            f">10 m {int(np.sum(drops > 10)):3d}  >30 m {int(np.sum(drops > 30)):3d} "
            f"({int(np.sum((drops > 30) & ~crashed))} airborne)  recovered under 10 m {100 * under10:5.1f}%")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out-dir", type=Path, default=Path("."))
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else ScenarioConfig()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for mode in ("p2", "p1"):
        t0 = time.perf_counter()
        stats = run_campaign(cfg.with_mode(mode), args.n, parallelism=args.jobs, master_seed=args.seed)
        export_stats(stats, args.out_dir / f"mc_{mode}.json")
        print(f"{mode}: {summary(stats)}  [{time.perf_counter() - t0:.0f} s]")


if __name__ == "__main__":
    main()
