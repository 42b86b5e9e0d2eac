"""Problem contract, primal-dual iterate, KKT residuals and termination.

Convention used throughout the package: constraint Jacobians are stored
``n x m`` with one constraint gradient per column, so that the Lagrangian
gradient reads ``grad_J + jac_g @ lam + jac_h @ nu``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DerivativeMismatch, NonFiniteEvaluation, ShapeMismatch

Vector = np.ndarray
Callback = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemDims:
    n: int
    m: int = 0
    p: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m < 0 or self.p < 0:
            raise ValueError(f"invalid dimensions {self}")
        if self.p > self.n:
            raise ValueError("more equality constraints than variables")


def _no_constraints(n):
    return (lambda z: np.zeros(0)), (lambda z: np.zeros((n, 0)))


@dataclass
class NlpProblem:
    """min J(z) s.t. g(z) <= 0, h(z) = 0, described by first-order callbacks.

    Omitted constraint callbacks default to the empty constraint set.
    """

    dims: ProblemDims
    eval_objective: Callable[[np.ndarray], float]
    eval_objective_gradient: Callback
    eval_ineq: Callback | None = None
    eval_ineq_jacobian: Callback | None = None
    eval_eq: Callback | None = None
    eval_eq_jacobian: Callback | None = None
    name: str = "nlp"

    def __post_init__(self):
        n = self.dims.n
        if self.eval_ineq is None:
            if self.dims.m:
                raise ValueError("m > 0 but no inequality callbacks given")
            self.eval_ineq, self.eval_ineq_jacobian = _no_constraints(n)
        if self.eval_eq is None:
            if self.dims.p:
                raise ValueError("p > 0 but no equality callbacks given")
            self.eval_eq, self.eval_eq_jacobian = _no_constraints(n)


class Evaluation(NamedTuple):
    """All first-order data of a problem at one point."""

    z: Vector
    J: float
    grad: Vector
    g: Vector
    jac_g: np.ndarray
    h: Vector
    jac_h: np.ndarray


def _checked(name, value, shape):
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        if arr.size == int(np.prod(shape)) and arr.ndim <= 1 and len(shape) <= 1:
            arr = arr.reshape(shape)
        else:
            raise ShapeMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteEvaluation(f"{name} returned non-finite values")
    return arr


def eval_objective(problem: NlpProblem, z) -> float:
    return float(_checked("objective", problem.eval_objective(z), ()))


def eval_ineq(problem: NlpProblem, z) -> Vector:
    return _checked("ineq", problem.eval_ineq(z), (problem.dims.m,))


def eval_eq(problem: NlpProblem, z) -> Vector:
    return _checked("eq", problem.eval_eq(z), (problem.dims.p,))


def evaluate(problem: NlpProblem, z) -> Evaluation:
    """Evaluate every callback at ``z`` with shape and finiteness checks."""
    n, m, p = problem.dims.n, problem.dims.m, problem.dims.p
    z = _checked("z", z, (n,))
    return Evaluation(
        z=z,
        J=eval_objective(problem, z),
        grad=_checked("objective_gradient", problem.eval_objective_gradient(z), (n,)),
        g=eval_ineq(problem, z),
        jac_g=_checked("ineq_jacobian", problem.eval_ineq_jacobian(z), (n, m)),
        h=eval_eq(problem, z),
        jac_h=_checked("eq_jacobian", problem.eval_eq_jacobian(z), (n, p)),
    )


@dataclass
class PrimalDualState:
    z: Vector
    lam: Vector
    nu: Vector
    s: Vector

    @classmethod
    def primal(cls, dims: ProblemDims, z) -> "PrimalDualState":
        return cls(np.asarray(z, dtype=float).copy(), np.zeros(dims.m),
                   np.zeros(dims.p), np.zeros(dims.m))

    def check(self, dims: ProblemDims):
        if self.z.shape != (dims.n,) or self.lam.shape != (dims.m,) \
                or self.nu.shape != (dims.p,) or self.s.shape != (dims.m,):
            raise ShapeMismatch("state dimensions do not match problem")


@dataclass
class StepDirection:
    d_z: Vector
    d_lam: Vector
    d_nu: Vector
    d_s: Vector


@dataclass(frozen=True)
class KktResidual:
    stationarity: float
    ineq_feasibility: float
    eq_feasibility: float
    complementarity: float

    @property
    def feasibility(self) -> float:
        return max(self.ineq_feasibility, self.eq_feasibility)


@dataclass
class SolverConfig:
    """Tuning knobs shared by both iteration drivers."""

    alpha: float = 0.1
    tol_stationarity: float = 1e-6
    tol_feasibility: float = 1e-8
    max_iterations: int = 3000
    sigma1: float = 1e-4
    sigma2: float = 0.4
    simplified_line_search: bool = True
    t_min: float = 1e-10
    # per-iteration assertions of the merit invariants
    check_invariants: bool = True

    def __post_init__(self):
        if not 0 < self.sigma1 <= self.sigma2 < 0.5:
            raise ValueError("need 0 < sigma1 <= sigma2 < 1/2")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.tol_stationarity <= 0 or self.tol_feasibility <= 0:
            raise ValueError("tolerances must be positive")


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def residual_from_values(ev: Evaluation, lam, nu) -> KktResidual:
    grad_lag = ev.grad + ev.jac_g @ lam + ev.jac_h @ nu
    return KktResidual(
        stationarity=_inf_norm(grad_lag),
        ineq_feasibility=_inf_norm(np.maximum(ev.g, 0.0)),
        eq_feasibility=_inf_norm(ev.h),
        complementarity=_inf_norm(lam * ev.g),
    )


def kkt_residual(problem: NlpProblem, state: PrimalDualState) -> KktResidual:
    """Infinity norms of the four first-order optimality residuals."""
    state.check(problem.dims)
    return residual_from_values(evaluate(problem, state.z), state.lam, state.nu)


def check_termination(step: StepDirection | None, residual: KktResidual,
                      config: SolverConfig) -> bool:
    """Stop once the Lagrangian gradient and the constraint violation are small.

    ``residual`` must be computed with the multipliers of the current
    projection (or QP) step; ``step`` is accepted for symmetry with the
    driver and is not inspected.
    """
    return (residual.stationarity <= config.tol_stationarity
            and residual.feasibility <= config.tol_feasibility)


@dataclass
class DerivativeCheck:
    name: str
    passed: bool
    max_error: float
    worst_entry: tuple = field(default=())


def _fd_jacobian(fun, z, out_size):
    """Central differences; column j of the result is d fun / d z_j."""
    n = z.size
    jac = np.zeros((out_size, n))
    for j in range(n):
        step = 1e-6 * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += step
        zm[j] -= step
        jac[:, j] = (np.atleast_1d(fun(zp)) - np.atleast_1d(fun(zm))) / (2 * step)
    return jac


def _compare(name, analytic, numeric, rtol):
    if analytic.size == 0:
        return DerivativeCheck(name, True, 0.0)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    err = np.abs(analytic - numeric) / scale
    idx = np.unravel_index(int(np.argmax(err)), err.shape)
    worst = (name, *idx, float(analytic[idx]), float(numeric[idx]))
    return DerivativeCheck(name, bool(err[idx] <= rtol), float(err[idx]), worst)


def validate_problem(problem: NlpProblem, probe_point, rtol=1e-5,
                     raise_on_failure=True) -> dict[str, DerivativeCheck]:
    """Check shapes, finiteness and analytic derivatives at ``probe_point``.

    Each gradient/Jacobian is compared entrywise against central finite
    differences with step ``1e-6 * max(1, |z_j|)``; the error is measured
    relative to ``max(1, |analytic|, |numeric|)``.
    """
    z = np.asarray(probe_point, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NonFiniteEvaluation("probe point is not finite")
    ev = evaluate(problem, z)
    dims = problem.dims
    report = {
        "objective_gradient": _compare(
            "objective_gradient", ev.grad[None, :],
            _fd_jacobian(lambda x: eval_objective(problem, x), z, 1), rtol),
        "ineq_jacobian": _compare(
            "ineq_jacobian", ev.jac_g.T,
            _fd_jacobian(lambda x: eval_ineq(problem, x), z, dims.m), rtol),
        "eq_jacobian": _compare(
            "eq_jacobian", ev.jac_h.T,
            _fd_jacobian(lambda x: eval_eq(problem, x), z, dims.p), rtol),
    }
    failed = [c for c in report.values() if not c.passed]
    if failed and raise_on_failure:
        worst = max(failed, key=lambda c: c.max_error)
        raise DerivativeMismatch(
            f"{worst.name} disagrees with finite differences "
            f"(relative error {worst.max_error:.3e})", worst.worst_entry)
    return report
