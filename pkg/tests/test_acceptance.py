"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single ``PASS criterion N: ...`` or ``FAIL criterion N:
...`` line to the terminal (capture is bypassed) before asserting.
"""

import numpy as np
import pytest

from pgsqp.merit import compute_slack, merit_derivative_at_zero, merit_value, slack_variation
from pgsqp.mpc import (CondensedEvaluator, FlopCounter, MpcProblem, condensed_gradient,
                       condensed_objective, mpc_projection_step, rollout, terminal_gradient)
from pgsqp.nlp import PrimalDualState, SolverConfig, StepDirection, evaluate, validate_problem
from pgsqp.pendulum import (BenchmarkConfig, closed_loop_simulate, euler_step, pendulum_jacobians,
                            pendulum_model, terminal_weight)
from pgsqp.problems import get_problem, problem_names
from pgsqp.qp import LinearizedFeasibleSet, project_onto_linearization, solve_strictly_convex_qp
from pgsqp.slack import closed_form_projection, equality_projection, lift
from pgsqp.solver import Status, solve_sqp, solve_variant, sufficient_decrease_holds

from oracles import central_difference, enumerate_qp, random_feasible_qp, random_nlp

TARGET_COST = 318.0
CFG = BenchmarkConfig()
P_PEND = terminal_weight(CFG)


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, f"criterion {n}: {detail}"
    return emit


@pytest.fixture(scope="module")
def variant_loop():
    return closed_loop_simulate(BenchmarkConfig())


@pytest.fixture(scope="module")
def baseline_loop():
    return closed_loop_simulate(BenchmarkConfig(baseline=True))


def pendulum_problem(x0, N=8):
    return MpcProblem(pendulum_model(CFG.params), N, np.diag(CFG.Q), np.atleast_2d(CFG.R),
                      P_PEND, -CFG.u_bound, CFG.u_bound, CFG.c, np.asarray(x0, dtype=float))


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


@pytest.mark.slow
def test_criterion_1_swing_up_stabilizes(variant_loop, verdict):
    r = variant_loop
    x = r.states[-1]
    t_end = r.times[-1]
    stable = (not r.failed and abs(t_end - 5.0) < 1e-9 and abs(x[2]) < 0.05
              and abs(x[0]) < 0.05)
    fast = r.wall_time < 60.0
    verdict(1, stable and fast,
            f"t={t_end:.1f} s, |angle|={abs(x[2]):.2e} rad, |cart|={abs(x[0]):.2e} m "
            f"(limits 0.05), wall time {r.wall_time:.1f} s (limit 60 s)")


@pytest.mark.slow
def test_criterion_2_closed_loop_cost(variant_loop, baseline_loop, verdict):
    cv, cb = variant_loop.closed_loop_cost, baseline_loop.closed_loop_cost
    agree = abs(cv - cb) / max(abs(cb), 1e-300)
    band = abs(cv - TARGET_COST) / TARGET_COST
    ok = (not variant_loop.failed and not baseline_loop.failed and agree <= 0.005
          and band <= 0.15)
    verdict(2, ok, f"variant {cv:.4f}, baseline {cb:.4f}, relative gap {agree:.2%} "
                   f"(limit 0.5%), distance from {TARGET_COST:g} {band:.1%} (limit 15%)")


@pytest.mark.slow
def test_criterion_3_every_instance_converges(variant_loop, baseline_loop, verdict):
    steps = variant_loop.per_step
    bad = [s.step for s in steps
           if not (s.status is Status.CONVERGED and s.stationarity <= 1e-6
                   and s.iterations <= 3000)]
    worst = max((s.stationarity for s in steps), default=np.nan)
    b_bad = sum(s.status is not Status.CONVERGED for s in baseline_loop.per_step)
    ok = len(steps) == CFG.steps and not bad
    verdict(3, ok, f"{len(steps) - len(bad)} of {CFG.steps} variant solves reach "
                   f"stationarity <= 1e-6 within 3000 iterations (worst final {worst:.2e}, "
                   f"failing steps {bad[:10]}{'...' if len(bad) > 10 else ''}); "
                   f"baseline unconverged solves: {b_bad}")


def test_criterion_4_qp_kernel_matches_enumeration(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(0, 5))
        p = int(rng.integers(0, min(2, n) + 1))
        H, c, A, b, E, e = random_feasible_qp(rng, n, m, p)
        ref = enumerate_qp(H, c, A, b, E, e)
        sol = solve_strictly_convex_qp(H, c, LinearizedFeasibleSet(A, b, E, e))
        err = float(np.abs(sol.d - ref[0]).max())
        # multipliers are unique when the active gradients are independent
        active = np.vstack([E, A[list(ref[3])]])
        if active.shape[0] == 0 or np.linalg.matrix_rank(active) == active.shape[0]:
            err = max(err, float(np.abs(sol.lambda_mult - ref[1]).max(initial=0.0)),
                      float(np.abs(sol.nu_mult - ref[2]).max(initial=0.0)))
        worst = max(worst, err)
    verdict(4, worst <= 1e-9, f"1000 random QPs (n<=6, m<=4, p<=2), worst deviation from "
                              f"enumeration {worst:.2e} (limit 1e-9)")


def test_criterion_5_closed_form_and_structured_projection(verdict):
    rng = np.random.default_rng(5)
    worst_generic = 0.0
    for _ in range(500):
        n, m, p = int(rng.integers(2, 5)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
        lifted = lift(random_nlp(rng, n, m, p))
        v = np.concatenate([rng.standard_normal(n), rng.uniform(0.2, 2.0, m)])
        alpha = float(rng.uniform(0.05, 1.0))
        d, mu = closed_form_projection(lifted, v, alpha)
        qp = project_onto_linearization(lifted.nlp, v, alpha)
        worst_generic = max(worst_generic, float(np.abs(d - qp.d).max()),
                            float(np.abs(mu - qp.nu_mult).max()))
    worst_mpc = 0.0
    for _ in range(50):
        x0 = rng.uniform(-0.5, 0.5, 4) + [0, 0, np.pi * rng.integers(0, 2), 0]
        ev = CondensedEvaluator(pendulum_problem(x0))
        v = ev.initial_point(rng.uniform(-10, 10, 8))
        alpha = float(rng.choice([1e-3, 0.02, 0.3]))
        d, mu = mpc_projection_step(ev, v, alpha)
        dense = equality_projection(ev.gradient(v), ev.constraint(v), ev.constraint_jacobian(v),
                                    alpha)
        worst_mpc = max(worst_mpc, rel_err(d, dense.d), rel_err(mu, dense.mu))
    ok = worst_generic <= 1e-10 and worst_mpc <= 1e-9
    verdict(5, ok, f"closed form vs QP on 500 lifted instances {worst_generic:.2e} (limit 1e-10); "
                   f"structured vs dense on 50 pendulum instances {worst_mpc:.2e} (limit 1e-9)")


def _fd(fun, u, h=1e-6):
    return central_difference(lambda w: np.atleast_1d(fun(w)), u, h)[0]


def _algorithm_step(prob, z, alpha, lam, nu, rho):
    sol = project_onto_linearization(prob, z, alpha)
    ev = evaluate(prob, z)
    s = compute_slack(ev.g, lam, rho)
    step = StepDirection(sol.d, sol.lambda_mult - lam, sol.nu_mult - nu,
                         slack_variation(ev.g, ev.jac_g.T @ sol.d, s))
    return PrimalDualState(z, lam, nu, s), step


def test_criterion_6_derivatives_match_finite_differences(verdict):
    rng = np.random.default_rng(6)
    worst = {"condensed_gradient": 0.0, "terminal_gradient": 0.0, "jacobians": 0.0,
             "phi_prime_zero": 0.0}
    for _ in range(50):
        pb = pendulum_problem(rng.uniform(-1, 1, 4) + [0, 0, np.pi * rng.integers(0, 2), 0])
        u = rng.uniform(-5, 5, pb.N)
        worst["condensed_gradient"] = max(
            worst["condensed_gradient"],
            rel_err(condensed_gradient(pb, u), _fd(lambda w: condensed_objective(pb, w), u)))

        def terminal(w, pb=pb):
            xN = rollout(pb.model, pb.x0, w)[-4:]
            return 0.5 * xN @ pb.P @ xN

        worst["terminal_gradient"] = max(worst["terminal_gradient"],
                                         rel_err(terminal_gradient(pb, u), _fd(terminal, u)))
        x, uk = rng.uniform([-2, -3, -np.pi, -5], [2, 3, 2 * np.pi, 5]), float(rng.uniform(-15, 15))
        F, G = pendulum_jacobians(CFG.params, x, uk)
        F_fd = central_difference(lambda y: euler_step(CFG.params, y, uk), x)
        G_fd = central_difference(lambda w: euler_step(CFG.params, x, w[0]), np.array([uk]))
        worst["jacobians"] = max(worst["jacobians"], rel_err(F, F_fd), rel_err(G, G_fd))
        # constraint Jacobians of the condensed MPC program
        ev = CondensedEvaluator(pb)
        report = validate_problem(ev.nlp, ev.initial_point(u), rtol=1e-5, raise_on_failure=False)
        worst["jacobians"] = max(worst["jacobians"], max(c.max_error for c in report.values()))
    for name in problem_names():
        bp = get_problem(name)
        d = bp.nlp.dims
        for _ in range(50):
            z = bp.z0 + rng.standard_normal(d.n)
            report = validate_problem(bp.nlp, z, rtol=1e-5, raise_on_failure=False)
            worst["jacobians"] = max(worst["jacobians"],
                                     max(c.max_error for c in report.values()))
            lam, nu = np.abs(rng.standard_normal(d.m)), rng.standard_normal(d.p)
            rho = float(rng.uniform(0, 5))
            state, step = _algorithm_step(bp.nlp, z, bp.alpha, lam, nu, rho)
            closed = merit_derivative_at_zero(bp.nlp, state, step, rho)
            eps = 1e-7
            fd = (merit_value(bp.nlp, state, step, eps, rho)
                  - merit_value(bp.nlp, state, step, -eps, rho)) / (2 * eps)
            worst["phi_prime_zero"] = max(worst["phi_prime_zero"],
                                          abs(closed - fd) / max(1.0, abs(fd)))
    ok = all(v <= 1e-5 for v in worst.values())
    verdict(6, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (limit 1e-5, "
                   "50 points each)")


def _invariant_failures(trace, cfg):
    """Count per-iteration violations of the merit-machinery invariants."""
    counts = {"penalty": 0, "decrease": 0, "signs": 0, "multiplier_bound": 0}
    for r in trace:
        if not r.phi_prime_zero <= r.penalty_threshold + r.penalty_allowance:
            counts["penalty"] += 1
        if not sufficient_decrease_holds(r, cfg):
            counts["decrease"] += 1
        if r.min_lam_after < 0 or r.min_s_after < 0:
            counts["signs"] += 1
        if r.lam_norm_after > r.lam_g_norm_max + 1e-12 * max(1.0, r.lam_g_norm_max):
            counts["multiplier_bound"] += 1
    return counts


@pytest.mark.slow
def test_criterion_7_merit_invariants_every_iteration(variant_loop, baseline_loop, verdict):
    cfg = SolverConfig()
    traces = []
    for name in problem_names():
        bp = get_problem(name)
        c = SolverConfig(alpha=bp.alpha)
        proj = bp.lifted.projector() if bp.lifted else None
        traces.append(solve_variant(bp.nlp, bp.z0, c, projector=proj).trace)
        traces.append(solve_sqp(bp.nlp, bp.z0, c).trace)
    for loop in (variant_loop, baseline_loop):
        traces.extend(s.trace for s in loop.per_step)
    total = {"penalty": 0, "decrease": 0, "signs": 0, "multiplier_bound": 0}
    for tr in traces:
        for k, v in _invariant_failures(tr, cfg).items():
            total[k] += v
    n_iter = sum(len(t) for t in traces)
    used = sum(r.phi_prime_zero > r.penalty_threshold for t in traces for r in t)
    ok = n_iter > 0 and not any(total.values())
    verdict(7, ok, f"{n_iter} iterations over {len(traces)} solves, violations {total}; "
                   f"{used} penalty checks needed the QP-residual allowance")


def test_criterion_8_local_linear_rate_on_circle(verdict):
    bp = get_problem("circle")
    z_star = np.array([2.0, 1.0]) / np.sqrt(5.0)
    # Lagrangian Hessian at the optimum is (2 + 2 nu*) I with nu* = sqrt(5) - 1
    alpha = 0.5 / (2.0 * np.sqrt(5.0))
    iterates = [z_star + 1e-3 * np.array([0.6, -0.8])]
    rep = solve_variant(bp.nlp, iterates[0], SolverConfig(alpha=alpha),
                        callback=lambda rec, st: iterates.append(st.z.copy()))
    err = [np.linalg.norm(z - z_star) for z in iterates]
    ratio = max(b / a for a, b in zip(err, err[1:]))

    steps, errors = [], [np.linalg.norm(bp.z0 - z_star)]

    def record(rec, state):
        steps.append((errors[-1], rec.t))
        errors.append(np.linalg.norm(state.z - z_star))

    rep2 = solve_variant(bp.nlp, bp.z0, SolverConfig(alpha=0.1), callback=record)
    close = [t for e, t in steps if e < 1e-4]
    ok = rep.converged and ratio <= 0.95 and rep2.converged and close and min(close) == 1.0
    verdict(8, ok, f"max contraction ratio {ratio:.3f} over {len(err) - 1} iterations "
                   f"(limit 0.95); {len(close)} steps inside 1e-4, smallest t "
                   f"{min(close) if close else np.nan}")


def test_criterion_9_projection_cost_linear_in_horizon(verdict):
    counts = []
    for N in (4, 8, 16, 32):
        ev = CondensedEvaluator(pendulum_problem([0.0, 0.0, np.pi, 0.0], N=N))
        counter = FlopCounter()
        mpc_projection_step(ev, ev.initial_point(np.zeros(N)), 0.02, counter)
        counts.append(counter.count)
    ratios = np.array(counts[1:]) / np.array(counts[:-1])
    ok = bool(np.all(np.abs(ratios - 2.0) <= 0.3))
    verdict(9, ok, f"operation counts {counts}, doubling ratios "
                   f"{np.round(ratios, 3).tolist()} (limit 2 +/- 15%)")


def test_criterion_10_millisecond_timings_not_reproduced(capsys):
    with capsys.disabled():
        print("\nNOTE criterion 10: reference millisecond timings depend on "
              "hardware and external solvers; not reproduced, covered by criteria 1-9")
