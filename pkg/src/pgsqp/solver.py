"""Iteration drivers: the projected-gradient variant and the SQP baseline.

Both algorithms share one loop. They differ only in the step oracle (the
projection of ``-alpha * grad J`` onto the linearized feasible set versus a
QP with a Hessian approximation) and in the descent target used by the
penalty update (``-|d_z|^2 / (2 alpha)`` versus ``-d_z'H d_z / 2``).
"""

from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor

from .errors import (DegenerateActiveSet, DegenerateSlacks, InfeasibleLinearization, NonFiniteEvaluation,
                     LineSearchFailure, MaxQpIterations, PenaltyDiverged, PenaltyUndefined,
                     RankDeficientConstraints)
from .merit import (augmented_lagrangian, compute_slack, merit_derivative, merit_noise, merit_value,
                    directional_derivative, slack_variation, slope_magnitude, update_penalty,
                    wolfe_line_search)
from .nlp import (Evaluation, KktResidual, NlpProblem, PrimalDualState, SolverConfig,
                  StepDirection, check_termination, evaluate, residual_from_values)
from .qp import LinearizedFeasibleSet, QpSolution, project_from_evaluation, solve_strictly_convex_qp

StepOracle = Callable[[Evaluation, float, object], QpSolution]

COND_WARN = 1e12
LAMBDA_BOUND_TOL = 1e-12


class Status(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"
    LINE_SEARCH_FAILURE = "line_search_failure"
    DEGENERATE = "degenerate"


class InvariantViolation(AssertionError):
    """A per-iteration property of the merit machinery failed."""


@dataclass
class IterationRecord:
    iter: int
    norm_dz: float
    phi_before: float
    rho: float
    t: float
    kkt_stationarity: float
    feasibility: float
    qp_iterations: int
    # extra data kept for the invariant checks
    phi_after: float = np.nan
    phi_prime_zero: float = np.nan
    penalty_threshold: float = np.nan
    penalty_allowance: float = 0.0
    lam_norm_after: float = np.nan
    lam_g_norm_max: float = np.nan
    min_lam_after: float = np.nan
    min_s_after: float = np.nan
    # step accepted by the rounding-level rule rather than sufficient decrease
    noise_floor: bool = False


@dataclass
class SolveReport:
    status: Status
    final_state: PrimalDualState
    trace: list
    wall_time: float
    message: str = ""
    final_residual: KktResidual | None = None

    @property
    def iterations(self):
        """Number of accepted steps."""
        return len(self.trace)

    @property
    def converged(self):
        return self.status is Status.CONVERGED


def damped_bfgs_update(H, delta_z, delta_grad_lagrangian):
    """BFGS update with Powell damping; keeps H symmetric positive definite."""
    s = np.asarray(delta_z, dtype=float)
    y = np.asarray(delta_grad_lagrangian, dtype=float)
    if np.linalg.norm(s) < 1e-14:
        return H
    Hs = H @ s
    sHs = float(s @ Hs)
    sy = float(s @ y)
    if sy < 0.2 * sHs:
        theta = 0.8 * sHs / (sHs - sy)
        y = theta * y + (1.0 - theta) * Hs
        sy = float(s @ y)
    H_new = H - np.outer(Hs, Hs) / sHs + np.outer(y, y) / sy
    return 0.5 * (H_new + H_new.T)


@dataclass
class HessianStrategy:
    """Hessian approximation used by the SQP baseline."""

    kind: str
    matrix: np.ndarray
    updates: int = 0
    resets: int = 0
    condition_warned: bool = field(default=False, repr=False)

    @classmethod
    def scaled_identity(cls, n, alpha):
        return cls("scaled-identity", np.eye(n) / alpha)

    @classmethod
    def damped_bfgs(cls, n, scale=1.0):
        return cls("damped-bfgs", scale * np.eye(n))

    def update(self, delta_z, delta_grad_lagrangian):
        if self.kind != "damped-bfgs":
            return
        s, y = np.asarray(delta_z), np.asarray(delta_grad_lagrangian)
        H_new = damped_bfgs_update(self.matrix, s, y)
        try:
            cho_factor(H_new)
        except LinAlgError:
            # definiteness lost to rounding: restart from the scaled identity
            sy = max(float(s @ y), 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)))
            H_new = max(float(y @ y) / sy, 1e-8) * np.eye(s.size)
            self.resets += 1
        self.matrix = H_new
        self.updates += 1
        cond = np.linalg.cond(self.matrix)
        if cond > COND_WARN and not self.condition_warned:
            warnings.warn(f"BFGS approximation condition number {cond:.2e}", RuntimeWarning)
            self.condition_warned = True


def _status_for(exc):
    if isinstance(exc, InfeasibleLinearization):
        return Status.INFEASIBLE
    if isinstance(exc, LineSearchFailure):
        return Status.LINE_SEARCH_FAILURE
    return Status.DEGENERATE


_HANDLED = (InfeasibleLinearization, LineSearchFailure, DegenerateActiveSet, DegenerateSlacks,
            MaxQpIterations, PenaltyDiverged, PenaltyUndefined, RankDeficientConstraints)


def sufficient_decrease_holds(rec: IterationRecord, config: SolverConfig) -> bool:
    """Armijo at the accepted step, or the rounding-level rule when flagged."""
    change = rec.phi_after - rec.phi_before
    if change <= config.sigma1 * rec.t * rec.phi_prime_zero:
        return True
    noise = merit_noise(rec.phi_before)
    return rec.noise_floor and change <= noise and \
        -config.sigma1 * rec.t * rec.phi_prime_zero <= noise


def _guarded(fun):
    # a trial point where the problem cannot be evaluated counts as +inf
    def wrapped(t):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                return fun(t)
        except NonFiniteEvaluation:
            return np.inf
    return wrapped


def qp_residual_allowance(ev, step: StepDirection, hd, lam_qp, nu_qp):
    """Slope error budget, as a function of rho, caused by the subproblem's
    KKT residuals: stationarity dotted with d_z, the linearized equalities
    weighted by ``rho |h| + |d_nu|`` and complementarity of the linearized
    inequalities weighted by lambda. Doubled as a safety factor.
    """
    d_z = step.d_z
    stat = abs(float(d_z @ (hd + ev.grad + ev.jac_g @ lam_qp + ev.jac_h @ nu_qp)))
    r_eq = np.abs(ev.h + ev.jac_h.T @ d_z)
    comp = float(lam_qp @ np.abs(ev.g + ev.jac_g.T @ d_z))
    abs_h, abs_dnu = np.abs(ev.h), np.abs(step.d_nu)

    def allowance(rho):
        return 2.0 * (stat + float(r_eq @ (rho * abs_h + abs_dnu)) + comp)

    return allowance


def _check(cond, message):
    if not cond:
        raise InvariantViolation(message)


def run_iterations(problem: NlpProblem, z0, config: SolverConfig, step_oracle: StepOracle,
                   apply_h: Callable[[np.ndarray], np.ndarray],
                   hessian: HessianStrategy | None = None, callback=None) -> SolveReport:
    """Shared major-iteration loop.

    ``step_oracle(ev, alpha, warm_start)`` returns the primal step and the
    multipliers of its subproblem, whose Hessian acts as ``apply_h``; the
    penalty update targets ``phi'(0) <= -d_z'H d_z / 2``. ``callback(record,
    state)`` is called after every accepted step.
    """
    start = time.perf_counter()
    dims = problem.dims
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (dims.n,) or not np.all(np.isfinite(z0)):
        raise ValueError("z0 must be a finite vector of length n")
    state = PrimalDualState.primal(dims, z0)
    alpha = config.alpha
    rho = 0.0
    trace = []
    lam_g_max = 0.0
    warm = None
    residual = None

    def report(status, message=""):
        return SolveReport(status, state, trace, time.perf_counter() - start, message, residual)

    try:
        ev = evaluate(problem, state.z)
        for i in range(config.max_iterations + 1):
            sol = step_oracle(ev, alpha, warm)
            warm = sol.working_set
            d_z, lam_g, nu_g = sol.d, sol.lambda_mult, sol.nu_mult
            residual = residual_from_values(ev, lam_g, nu_g)
            if check_termination(None, residual, config):
                state = PrimalDualState(ev.z.copy(), lam_g.copy(), nu_g.copy(),
                                        compute_slack(ev.g, lam_g, rho))
                return report(Status.CONVERGED)
            if i == config.max_iterations:
                return report(Status.MAX_ITERATIONS,
                              f"no convergence in {config.max_iterations} iterations")
            if i == 0:
                state.lam, state.nu = lam_g.copy(), nu_g.copy()
            lam_g_max = max(lam_g_max, float(np.linalg.norm(lam_g)))

            s = compute_slack(ev.g, state.lam, rho)
            state.s = s
            step = StepDirection(d_z, lam_g - state.lam, nu_g - state.nu,
                                 slack_variation(ev.g, ev.jac_g.T @ d_z, s))

            def phi_prime_zero(r, step=step, state=state, ev=ev):
                return directional_derivative(ev, state.lam, state.nu, state.s, step, r)

            hd = apply_h(d_z)
            target = -0.5 * float(d_z @ hd)
            allowance = qp_residual_allowance(ev, step, hd, lam_g, nu_g)
            rho = update_penalty(rho, phi_prime_zero, d_z, alpha, ev.g + s, ev.h,
                                 step.d_lam, step.d_nu, threshold=target,
                                 allowance=allowance)
            dphi0 = phi_prime_zero(rho)
            slack_room = allowance(rho)
            phi0 = augmented_lagrangian(ev.J, ev.g, ev.h, state.lam, state.nu, s, rho)
            ls = wolfe_line_search(
                _guarded(lambda t: merit_value(problem, state, step, t, rho)),
                _guarded(lambda t: merit_derivative(problem, state, step, t, rho)),
                dphi0, config, phi_zero=phi0,
                slope_scale=slope_magnitude(ev, state.lam, state.nu, s, step, rho))
            t = ls.t

            # s + t*d_s mixes s >= 0 with -(g + grad_g'd) >= 0; clip the rounding
            new_state = PrimalDualState(state.z + t * step.d_z, state.lam + t * step.d_lam,
                                        state.nu + t * step.d_nu,
                                        np.maximum(state.s + t * step.d_s, 0.0))
            new_ev = evaluate(problem, new_state.z)
            if hessian is not None:
                lag_new = new_ev.grad + new_ev.jac_g @ new_state.lam + new_ev.jac_h @ new_state.nu
                lag_old = ev.grad + ev.jac_g @ new_state.lam + ev.jac_h @ new_state.nu
                hessian.update(new_state.z - state.z, lag_new - lag_old)

            rec = IterationRecord(
                iter=i, norm_dz=float(np.linalg.norm(d_z)), phi_before=float(phi0),
                rho=float(rho), t=float(t), kkt_stationarity=residual.stationarity,
                feasibility=residual.feasibility, qp_iterations=sol.iterations,
                phi_after=float(ls.phi_t), phi_prime_zero=float(dphi0),
                penalty_threshold=float(target), penalty_allowance=float(slack_room),
                lam_norm_after=float(np.linalg.norm(new_state.lam)), lam_g_norm_max=lam_g_max,
                min_lam_after=float(new_state.lam.min(initial=np.inf)),
                min_s_after=float(new_state.s.min(initial=np.inf)),
                noise_floor=bool(ls.satisfied.get("noise_floor", False)))
            trace.append(rec)
            if config.check_invariants:
                _check(dphi0 <= target + slack_room, f"iteration {i}: penalty condition violated")
                _check(sufficient_decrease_holds(rec, config),
                       f"iteration {i}: sufficient decrease violated")
                _check(rec.min_lam_after >= 0.0, f"iteration {i}: negative multiplier")
                _check(rec.min_s_after >= 0.0, f"iteration {i}: negative slack")
                _check(rec.lam_norm_after <= lam_g_max + LAMBDA_BOUND_TOL * max(1.0, lam_g_max),
                       f"iteration {i}: multiplier bound violated")
            state, ev = new_state, new_ev
            if callback is not None:
                callback(rec, state)
    except _HANDLED as exc:
        return report(_status_for(exc), f"{type(exc).__name__}: {exc}")
    raise AssertionError("unreachable")


def solve_variant(problem: NlpProblem, z0, config: SolverConfig | None = None,
                  projector: StepOracle | None = None, callback=None) -> SolveReport:
    """Projected-gradient variant of SQP.

    ``projector`` replaces the generic QP projection, e.g. by the closed
    form available for equality-only problems.
    """
    config = config or SolverConfig()
    alpha = config.alpha
    return run_iterations(problem, z0, config, projector or project_from_evaluation,
                          lambda d: d / alpha, callback=callback)


def solve_sqp(problem: NlpProblem, z0, config: SolverConfig | None = None,
              hessian: HessianStrategy | None = None, callback=None) -> SolveReport:
    """SQP with a quasi-Newton (or fixed) Hessian approximation."""
    config = config or SolverConfig()
    if hessian is None:
        # start from the variant's metric so the first steps coincide
        hessian = HessianStrategy.damped_bfgs(problem.dims.n, 1.0 / config.alpha)

    def oracle(ev, alpha, warm_start):
        fs = LinearizedFeasibleSet.from_evaluation(ev)
        return solve_strictly_convex_qp(hessian.matrix, ev.grad, fs, warm_start=warm_start)

    return run_iterations(problem, z0, config, oracle,
                          lambda d: hessian.matrix @ d, hessian=hessian,
                          callback=callback)
