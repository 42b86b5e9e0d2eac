"""Run the cart-pendulum closed loop with both methods and print a summary table.

Writes the trajectory and per-solve CSVs of each run into --out-dir.
"""

import argparse
from pathlib import Path

import numpy as np

from pgsqp.cli import (STEP_COLUMNS, TRAJECTORY_COLUMNS, step_rows, trajectory_rows,
                       write_csv)
from pgsqp.pendulum import BenchmarkConfig, closed_loop_simulate
from pgsqp.solver import Status


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--alpha", type=float, default=0.02)
    ap.add_argument("--out-dir", default="bench_out")
    ap.add_argument("--skip-variant", action="store_true")
    args = ap.parse_args()
    out = Path(args.out_dir)

    methods = [("sqp-bfgs", True)]
    if not args.skip_variant:
        methods.insert(0, ("projected-gradient", False))
    rows = []
    for label, baseline in methods:
        cfg = BenchmarkConfig(steps=args.steps, alpha=args.alpha, baseline=baseline)
        res = closed_loop_simulate(cfg)
        write_csv(out / f"{label}_trajectory.csv", TRAJECTORY_COLUMNS, trajectory_rows(res))
        write_csv(out / f"{label}_steps.csv", STEP_COLUMNS, step_rows(res))
        iters = np.array([s.iterations for s in res.per_step])
        n_conv = sum(s.status is Status.CONVERGED for s in res.per_step)
        rows.append((label, res.closed_loop_cost, res.wall_time, iters.mean(), iters.max(),
                     n_conv, len(res.per_step), res.states[-1], res.message))

    print(f"{'method':<20}{'cost':>12}{'wall [s]':>10}{'mean it':>9}{'max it':>8}"
          f"{'converged':>11}  final (cart, angle)")
    for label, cost, wall, mean_it, max_it, n_conv, n, x, msg in rows:
        print(f"{label:<20}{cost:>12.4f}{wall:>10.2f}{mean_it:>9.1f}{max_it:>8d}"
              f"{f'{n_conv}/{n}':>11}  ({x[0]:+.4f}, {x[2]:+.4f})")
        if msg:
            print(f"  {label}: {msg}")
    if len(rows) == 2:
        gap = abs(rows[0][1] - rows[1][1]) / rows[1][1]
        print(f"relative cost gap: {gap:.3%}")


if __name__ == "__main__":
    main()
