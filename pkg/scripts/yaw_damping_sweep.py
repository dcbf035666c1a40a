#!/usr/bin/env python3
"""Sensitivity of the recovery statistics to the yaw damping coefficient.

Usage: python scripts/yaw_damping_sweep.py [--n 40] [--values 0.5e-3,1.5e-3,3e-3,6e-3] [--allocator p2]

For each coefficient C (moment -C * omega_z about body z) a campaign is run on
the same seeds and its crash count, recovery count and height-drop tail are
printed, together with the relaxed-hover yaw rate sigma * m * g / C.
"""

import argparse
from dataclasses import replace

import numpy as np

from upset_recovery.harness import ScenarioConfig, run_campaign


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--values", default="0.5e-3,1.5e-3,3e-3,6e-3")
    ap.add_argument("--allocator", choices=["p1", "p2"], default="p2")
    args = ap.parse_args()

    base = ScenarioConfig().with_mode(args.allocator)
    p = base.vehicle
    print("   C [N m s]  spin [rad/s]  crashes  recovered  drop p50  >10 m  >30 m")
    for c in (float(v) for v in args.values.split(",")):
        cfg = replace(base, disturbance=replace(base.disturbance, rotational_drag=(0.0, 0.0, c)))
        st = run_campaign(cfg, args.n, master_seed=args.seed)
        drops = np.array([f["max_height_drop"] for f in st.flights])
        spin = p.torque_thrust_ratio * p.mass * p.gravity / c
        print(f"{c:12.2e}  {spin:12.1f}  {st.crash_count:7d}  {st.recovered_count:9d}  "
              f"{st.drop_p50:8.2f}  {int(np.sum(drops > 10)):5d}  {int(np.sum(drops > 30)):5d}")


if __name__ == "__main__":
    main()
