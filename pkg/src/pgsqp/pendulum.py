"""Cart-pendulum swing-up benchmark: model, Jacobians, closed-loop MPC.

State ``x = (cart position, cart velocity, angle, angular velocity)`` with
the angle measured from the upright position, so ``x3 = pi`` hangs down.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import LineSearchFailure, SolverError
from .mpc import CondensedEvaluator, DynamicsModel, MpcProblem, solve_dare
from .nlp import SolverConfig
from .solver import HessianStrategy, SolveReport, Status, solve_sqp, solve_variant


@dataclass(frozen=True)
class PendulumParams:
    l: float = 0.3
    m: float = 0.2
    M: float = 0.5
    g: float = 10.0
    Ts: float = 0.1

    def __post_init__(self):
        if min(self.l, self.m, self.M, self.g, self.Ts) <= 0:
            raise ValueError("pendulum parameters must be positive")


def pendulum_ode(params: PendulumParams, x, u):
    l, m, M, g = params.l, params.m, params.M, params.g
    _, v, th, w = np.asarray(x, dtype=float).tolist()
    u = float(np.asarray(u).reshape(-1)[0])
    # math.sin raises on inf; a diverged trial state must come out non-finite
    s, c = (math.sin(th), math.cos(th)) if math.isfinite(th) else (math.nan, math.nan)
    w2 = w * w
    den = M + m * s * s
    return np.array([
        v,
        (m * g * s * c - m * l * w2 * s + u) / den,
        w,
        g / l * s + (m * g * s * c * c + u * c - m * l * w2 * s * c) / (l * den),
    ])


def euler_step(params: PendulumParams, x, u):
    x = np.asarray(x, dtype=float)
    return x + params.Ts * pendulum_ode(params, x, u)


def pendulum_jacobians(params: PendulumParams, x, u):
    """(F, G) = derivatives of ``euler_step`` with respect to x and u.

    Also accepts a stack of states (K, 4) with inputs (K,) or (K, 1) and
    then returns arrays of shape (K, 4, 4) and (K, 4, 1).
    """
    l, m, M, g, Ts = params.l, params.m, params.M, params.g, params.Ts
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    u = np.asarray(u, dtype=float).reshape(X.shape[0])
    s, c = np.sin(X[:, 2]), np.cos(X[:, 2])
    w = X[:, 3]
    den = M + m * s * s
    dden = 2 * m * s * c

    num2 = m * g * s * c - m * l * w * w * s + u
    dnum2 = m * g * (c * c - s * s) - m * l * w * w * c
    num4 = m * g * s * c * c + u * c - m * l * w * w * s * c
    dnum4 = m * g * (c ** 3 - 2 * s * s * c) - u * s - m * l * w * w * (c * c - s * s)

    K = X.shape[0]
    F = np.zeros((K, 4, 4))
    F[:, 0, 0] = F[:, 1, 1] = F[:, 2, 2] = F[:, 3, 3] = 1.0
    F[:, 0, 1] = F[:, 2, 3] = Ts
    F[:, 1, 2] = Ts * (dnum2 * den - num2 * dden) / den ** 2
    F[:, 1, 3] = Ts * -2 * m * l * w * s / den
    F[:, 3, 2] = Ts * (g / l * c + (dnum4 * den - num4 * dden) / (l * den ** 2))
    F[:, 3, 3] += Ts * -2 * m * w * s * c / den
    G = np.zeros((K, 4, 1))
    G[:, 1, 0] = Ts / den
    G[:, 3, 0] = Ts * c / (l * den)
    if single:
        return F[0], G[0]
    return F, G


def pendulum_model(params: PendulumParams | None = None) -> DynamicsModel:
    params = params or PendulumParams()
    return DynamicsModel(
        4, 1,
        step=lambda x, u: euler_step(params, x, u),
        jac_x=lambda x, u: pendulum_jacobians(params, x, u)[0],
        jac_u=lambda x, u: pendulum_jacobians(params, x, u)[1],
        name="pendulum",
        batch_jacobians=lambda xs, U: pendulum_jacobians(params, xs, U))


@dataclass
class BenchmarkConfig:
    steps: int = 50
    N: int = 8
    Q: tuple = (10.0, 0.1, 100.0, 0.1)
    R: float = 1.0
    c: float = 1.5
    u_bound: float = 15.0
    alpha: float = 0.02
    x0: tuple = (0.0, 0.0, np.pi, 0.0)
    params: PendulumParams = field(default_factory=PendulumParams)
    baseline: bool = False
    max_iterations: int = 3000
    tol_stationarity: float = 1e-6
    tol_feasibility: float = 1e-8
    slack_floor: float = 1e-3

    def solver_config(self) -> SolverConfig:
        return SolverConfig(alpha=self.alpha, tol_stationarity=self.tol_stationarity,
                            tol_feasibility=self.tol_feasibility,
                            max_iterations=self.max_iterations)


def terminal_weight(config: BenchmarkConfig):
    """Riccati terminal weight for the model linearized at the upright equilibrium."""
    F, G = pendulum_jacobians(config.params, np.zeros(4), 0.0)
    return solve_dare(F, G, np.diag(config.Q), np.atleast_2d(config.R))


def stage_cost(config: BenchmarkConfig, x, u):
    return 0.5 * (x @ np.diag(config.Q) @ x + config.R * float(u) ** 2)


@dataclass
class StepSummary:
    step: int
    status: Status
    iterations: int
    stationarity: float
    feasibility: float
    terminal_value: float
    wall_time: float
    message: str = ""
    # per-iteration records of the solve
    trace: list = field(default_factory=list, repr=False)


@dataclass
class ClosedLoopResult:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    stage_costs: np.ndarray
    closed_loop_cost: float
    per_step: list
    wall_time: float
    terminal_level: float
    failed: bool = False
    message: str = ""
    # status that stopped the loop early, None if it ran to the end
    failure_status: Status | None = None

    @property
    def trajectory(self):
        """(time, x, u) triples; the final state carries no input."""
        us = list(self.inputs) + [np.nan]
        return [(t, x, u) for t, x, u in zip(self.times, self.states, us)]


def shift_inputs(u, nu=1):
    """Drop the first block and repeat the last one."""
    u = np.asarray(u, dtype=float)
    return np.concatenate([u[nu:], u[-nu:]])


def solve_instance(problem: MpcProblem, u0, config: BenchmarkConfig):
    """One MPC solve from the input guess ``u0``; returns (report, evaluator)."""
    ev = CondensedEvaluator(problem)
    v0 = ev.initial_point(u0, config.slack_floor)
    cfg = config.solver_config()
    if config.baseline:
        report = solve_sqp(ev.nlp, v0, cfg, HessianStrategy.damped_bfgs(ev.dims.n, 1.0 / cfg.alpha))
    else:
        report = solve_variant(ev.nlp, v0, cfg, projector=ev.projector())
    return report, ev


def closed_loop_simulate(config: BenchmarkConfig | None = None) -> ClosedLoopResult:
    config = config or BenchmarkConfig()
    start = time.perf_counter()
    model = pendulum_model(config.params)
    P = terminal_weight(config)
    x = np.asarray(config.x0, dtype=float)
    states, inputs, costs, summaries = [x.copy()], [], [], []
    u_guess = np.zeros(config.N)
    failed, message, failure = False, "", None
    for k in range(config.steps):
        problem = MpcProblem(model, config.N, np.diag(config.Q), np.atleast_2d(config.R), P,
                             -config.u_bound, config.u_bound, config.c, x)
        try:
            report, ev = solve_instance(problem, u_guess, config)
        except SolverError as exc:
            failed, message = True, f"step {k}: {type(exc).__name__}: {exc}"
            failure = (Status.LINE_SEARCH_FAILURE if isinstance(exc, LineSearchFailure)
                       else Status.DEGENERATE)
            break
        v = report.final_state.z
        res = report.final_residual
        summaries.append(StepSummary(
            k, report.status, report.iterations,
            res.stationarity if res else np.nan, res.feasibility if res else np.nan,
            ev.terminal_value(v), report.wall_time, report.message, report.trace))
        if report.status in (Status.INFEASIBLE, Status.DEGENERATE, Status.LINE_SEARCH_FAILURE):
            failed, message = True, f"step {k}: {report.status.value}: {report.message}"
            failure = report.status
            break
        u_opt = ev.split(v)[0]
        u_apply = float(u_opt[0])
        costs.append(stage_cost(config, x, u_apply))
        inputs.append(u_apply)
        x = euler_step(config.params, x, u_apply)
        states.append(x.copy())
        u_guess = shift_inputs(u_opt)
    n = len(states)
    return ClosedLoopResult(
        times=config.params.Ts * np.arange(n), states=np.array(states),
        inputs=np.array(inputs), stage_costs=np.array(costs),
        closed_loop_cost=float(np.sum(costs)), per_step=summaries,
        wall_time=time.perf_counter() - start, terminal_level=config.c,
        failed=failed, message=message, failure_status=failure)
