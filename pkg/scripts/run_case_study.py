#!/usr/bin/env python3
"""Run the inverted-start case study with both allocators and compare them.

Usage: python scripts/run_case_study.py [--out-dir DIR] [--duration SECONDS]

Prints recovery times, the peak of omega_tilde after 0.1 s, and a coarse
n_z / omega_tilde table. With --out-dir, full trajectories are written as
case_study_p1.csv and case_study_p2.csv.
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from upset_recovery.harness import SimConfig, case_study_config, export_trajectory, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path)
    ap.add_argument("--duration", type=float, default=4.0)
    args = ap.parse_args()

    runs = {}
    for mode in ("p2", "p1"):
        cfg = replace(case_study_config(mode), sim=SimConfig(duration=args.duration))
        runs[mode] = run_scenario(cfg)
        if args.out_dir:
            args.out_dir.mkdir(parents=True, exist_ok=True)
            export_trajectory(runs[mode][0], args.out_dir / f"case_study_{mode}.csv")

    fmt = lambda v: "   -  " if v is None else f"{v:6.3f}"  # noqa: E731
    print(f"initial omega_tilde: {runs['p2'][0].omega_tilde[0]:.3f} rad/s")
    print("alloc  attitude[s]  crashed  max drop[m]  peak omega_tilde after 0.1 s")
    for mode, (traj, m) in runs.items():
        late = traj.omega_tilde[traj.t >= 0.1]
        print(f"{mode:5s}  {fmt(m.attitude_recovery_time):>11s}  {str(m.crashed):7s}  "
              f"{m.max_height_drop:11.2f}  {late.max():8.2f}")

    print("\n  t    n_z(P2)  n_z(P1)   wt(P2)   wt(P1)")
    t2, t1 = runs["p2"][0], runs["p1"][0]

    def cell(traj, series, t, fmt_):
        i = int(np.searchsorted(traj.t, t - 1e-9))
        return format(series[i], fmt_) if i < len(traj) else "-"

    for t in np.arange(0.0, args.duration + 1e-9, 0.1):
        print(f"{t:4.1f}  {cell(t2, t2.n_z, t, '+.3f'):>7s}  {cell(t1, t1.n_z, t, '+.3f'):>7s}  "
              f"{cell(t2, t2.omega_tilde, t, '+.2f'):>7s}  {cell(t1, t1.omega_tilde, t, '+.2f'):>7s}")

if __name__ == "__main__":
    main()
