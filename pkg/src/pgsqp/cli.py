"""Command-line front end: ``pgsqp solve`` and ``pgsqp bench-pendulum``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .errors import UnknownProblem
from .nlp import SolverConfig
from .pendulum import BenchmarkConfig, ClosedLoopResult, closed_loop_simulate
from .problems import get_problem, problem_names
from .solver import SolveReport, Status, solve_sqp, solve_variant

EXIT_CODES = {
    Status.CONVERGED: 0,
    Status.MAX_ITERATIONS: 2,
    Status.INFEASIBLE: 3,
    Status.DEGENERATE: 3,
    Status.LINE_SEARCH_FAILURE: 4,
}
EXIT_UNKNOWN_PROBLEM = 1

TRACE_COLUMNS = ("iter", "norm_dz", "phi", "rho", "t", "kkt_stationarity", "feasibility",
                 "qp_iterations")
TRAJECTORY_COLUMNS = ("time", "x1", "x2", "x3", "x4", "u", "stage_cost")
STEP_COLUMNS = ("step", "status", "iterations", "stationarity", "feasibility",
                "terminal_value", "wall_time")


def fmt(x) -> str:
    """17 significant digits, enough for an exact float round trip."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def trace_rows(report: SolveReport):
    for r in report.trace:
        yield (r.iter, r.norm_dz, r.phi_before, r.rho, r.t, r.kkt_stationarity,
               r.feasibility, r.qp_iterations)


def trajectory_rows(result: ClosedLoopResult):
    costs = list(result.stage_costs) + [np.nan]
    for (t, x, u), c in zip(result.trajectory, costs):
        yield (t, *x, u, c)


def step_rows(result: ClosedLoopResult):
    for s in result.per_step:
        yield (s.step, s.status.value, s.iterations, s.stationarity, s.feasibility,
               s.terminal_value, s.wall_time)


def cmd_solve(args) -> int:
    try:
        bp = get_problem(args.problem)
    except UnknownProblem as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_PROBLEM
    alpha = args.alpha if args.alpha is not None else bp.alpha
    cfg = SolverConfig(alpha=alpha, tol_stationarity=args.tol, max_iterations=args.max_iter,
                       simplified_line_search=not args.wolfe)
    if args.baseline:
        report = solve_sqp(bp.nlp, bp.z0, cfg)
    else:
        proj = bp.lifted.projector() if bp.lifted is not None else None
        report = solve_variant(bp.nlp, bp.z0, cfg, projector=proj)
    if args.out:
        write_csv(args.out, TRACE_COLUMNS, trace_rows(report))
    res = report.final_residual
    z = report.final_state.z
    if bp.lifted is not None:
        z = z[:bp.lifted.n_base]
    print(f"problem: {bp.name}")
    print(f"method: {'sqp-bfgs' if args.baseline else 'projected-gradient'} (alpha={alpha:g})")
    print(f"status: {report.status.value}")
    print(f"iterations: {report.iterations}")
    if res is not None:
        print(f"stationarity: {res.stationarity:.3e}")
        print(f"feasibility: {res.feasibility:.3e}")
    print("z: " + " ".join(f"{v:.9g}" for v in z))
    if report.message:
        print(f"message: {report.message}")
    return EXIT_CODES[report.status]


def cmd_bench_pendulum(args) -> int:
    cfg = BenchmarkConfig(steps=args.steps, alpha=args.alpha, u_bound=args.u_bound,
                          baseline=args.baseline, max_iterations=args.max_iter, N=args.horizon)
    result = closed_loop_simulate(cfg)
    out = Path(args.out_dir)
    write_csv(out / args.trajectory_csv, TRAJECTORY_COLUMNS, trajectory_rows(result))
    write_csv(out / args.steps_csv, STEP_COLUMNS, step_rows(result))
    iters = np.array([s.iterations for s in result.per_step])
    n_conv = sum(s.status is Status.CONVERGED for s in result.per_step)
    print(f"method: {'sqp-bfgs' if args.baseline else 'projected-gradient'} (alpha={cfg.alpha:g})")
    print(f"closed-loop cost: {result.closed_loop_cost:.6f}")
    print(f"steps simulated: {len(result.inputs)} of {cfg.steps}")
    if iters.size:
        print(f"iterations per solve: mean {iters.mean():.1f}, max {iters.max()}")
    print(f"solves converged: {n_conv} of {len(result.per_step)}")
    x = result.states[-1]
    print(f"final state: cart {x[0]:.4g} m, angle {x[2]:.4g} rad")
    print(f"wall time: {result.wall_time:.2f} s")
    if result.failed:
        print(f"stopped early: {result.message}")
        return EXIT_CODES[result.failure_status]
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgsqp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a built-in test problem")
    p.add_argument("problem", help="one of: " + ", ".join(problem_names()))
    p.add_argument("--alpha", type=float, default=None,
                   help="gradient step size (default: the problem's own)")
    p.add_argument("--tol", type=float, default=1e-6, help="stationarity tolerance")
    p.add_argument("--max-iter", type=int, default=3000)
    p.add_argument("--baseline", action="store_true", help="SQP with damped BFGS instead")
    p.add_argument("--wolfe", action="store_true", help="also enforce the curvature condition")
    p.add_argument("--out", default=None, help="trace CSV path")
    p.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench-pendulum", help="closed-loop cart-pendulum swing-up")
    defaults = BenchmarkConfig()
    b.add_argument("--steps", type=int, default=defaults.steps)
    b.add_argument("--alpha", type=float, default=defaults.alpha)
    b.add_argument("--u-bound", type=float, default=defaults.u_bound)
    b.add_argument("--horizon", type=int, default=defaults.N)
    b.add_argument("--max-iter", type=int, default=defaults.max_iterations)
    b.add_argument("--baseline", action="store_true")
    b.add_argument("--out-dir", default=".")
    b.add_argument("--trajectory-csv", default="pendulum_trajectory.csv")
    b.add_argument("--steps-csv", default="pendulum_steps.csv")
    b.set_defaults(func=cmd_bench_pendulum)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
