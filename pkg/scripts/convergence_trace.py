"""Solve one pendulum MPC instance and dump the per-iteration trace.

The instance is the first closed-loop problem (pendulum hanging at rest,
zero input guess) unless --x0 is given. The CSV has the same columns as
``pgsqp solve --out`` and is meant for external plotting of the KKT
residual against the iteration count.
"""

import argparse

import numpy as np

from pgsqp.cli import TRACE_COLUMNS, trace_rows, write_csv
from pgsqp.mpc import MpcProblem
from pgsqp.pendulum import BenchmarkConfig, pendulum_model, solve_instance, terminal_weight


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--x0", type=float, nargs=4, default=None)
    ap.add_argument("--alpha", type=float, default=0.02)
    ap.add_argument("--max-iter", type=int, default=3000)
    ap.add_argument("--baseline", action="store_true")
    ap.add_argument("--out", default="trace.csv")
    args = ap.parse_args()

    cfg = BenchmarkConfig(alpha=args.alpha, max_iterations=args.max_iter,
                          baseline=args.baseline)
    x0 = np.array(args.x0 if args.x0 is not None else cfg.x0, dtype=float)
    problem = MpcProblem(pendulum_model(cfg.params), cfg.N, np.diag(cfg.Q), np.atleast_2d(cfg.R),
                         terminal_weight(cfg), -cfg.u_bound, cfg.u_bound, cfg.c, x0)
    report, ev = solve_instance(problem, np.zeros(cfg.N), cfg)
    write_csv(args.out, TRACE_COLUMNS, trace_rows(report))
    res = report.final_residual
    print(f"status {report.status.value} after {report.iterations} iterations")
    if res is not None:
        print(f"stationarity {res.stationarity:.3e}, feasibility {res.feasibility:.3e}")
    print(f"terminal value {ev.terminal_value(report.final_state.z):.6f} (level {cfg.c})")
    print(f"trace written to {args.out}")


if __name__ == "__main__":
    main()
