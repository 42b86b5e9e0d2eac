"""Dense strictly convex QP kernel and projection onto linearized constraints.

The QP solved here is

    min 1/2 d'Hd + c'd   s.t.  b_ineq + A_ineq d <= 0,  b_eq + A_eq d = 0

with H positive definite, by a primal active-set method. A feasible starting
point comes from a phase-1 problem that lifts all inequality rows by a
common shift ``tau >= 0`` and drives ``tau`` to zero with the same kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DegenerateActiveSet, InfeasibleLinearization, MaxQpIterations
from .nlp import Evaluation, NlpProblem, evaluate

RANK_TOL = 1e-10
GRAM_COND_MAX = 1e12
ACTIVE_TOL = 1e-9


@dataclass
class LinearizedFeasibleSet:
    """{d : b_ineq + A_ineq d <= 0, b_eq + A_eq d = 0}."""

    A_ineq: np.ndarray
    b_ineq: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray

    def __post_init__(self):
        self.A_ineq = np.atleast_2d(np.asarray(self.A_ineq, dtype=float))
        self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
        self.b_ineq = np.asarray(self.b_ineq, dtype=float).reshape(-1)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        n = max(self.A_ineq.shape[1], self.A_eq.shape[1])
        if self.A_ineq.size == 0:
            self.A_ineq = np.zeros((self.b_ineq.size, n))
        if self.A_eq.size == 0:
            self.A_eq = np.zeros((self.b_eq.size, n))
        if self.A_ineq.shape != (self.b_ineq.size, n) or self.A_eq.shape != (self.b_eq.size, n):
            raise ValueError("inconsistent shapes in linearized feasible set")
        if self.p:
            sv = np.linalg.svd(self.A_eq, compute_uv=False)
            if self.p > n or sv[-1] <= RANK_TOL * max(sv[0], 1.0):
                raise DegenerateActiveSet("equality rows are linearly dependent")

    @property
    def n(self):
        return self.A_ineq.shape[1]

    @property
    def m(self):
        return self.b_ineq.size

    @property
    def p(self):
        return self.b_eq.size

    @classmethod
    def from_evaluation(cls, ev: Evaluation) -> "LinearizedFeasibleSet":
        return cls(ev.jac_g.T, ev.g, ev.jac_h.T, ev.h)

    def ineq_values(self, d):
        return self.b_ineq + self.A_ineq @ d


@dataclass
class QpSolution:
    d: np.ndarray
    lambda_mult: np.ndarray
    nu_mult: np.ndarray
    active_set: tuple
    iterations: int
    # final working set, usable as a warm start for the next solve
    working_set: tuple = field(default=())


class _Kernel:
    """Equality-constrained subproblem solves for a fixed H (range-space)."""

    def __init__(self, H, c, fs: LinearizedFeasibleSet):
        try:
            self.chol = cho_factor(H)
        except LinAlgError as exc:
            raise ValueError("QP Hessian is not positive definite") from exc
        self.c = c
        self.fs = fs
        self.Hinv_c = cho_solve(self.chol, c)

    def rows(self, W):
        A = np.vstack([self.fs.A_eq, self.fs.A_ineq[list(W)]])
        b = np.concatenate([self.fs.b_eq, self.fs.b_ineq[list(W)]])
        return A, b

    def solve(self, W):
        """Minimizer and multipliers with rows W (and all equalities) active."""
        A, b = self.rows(W)
        if A.shape[0] == 0:
            return -self.Hinv_c, np.zeros(0)
        sv = np.linalg.svd(A, compute_uv=False)
        # more rows than variables: the Gram matrix is singular whatever sv says
        if A.shape[0] > A.shape[1] or sv[-1] == 0 or (sv[0] / sv[-1]) ** 2 > GRAM_COND_MAX:
            raise DegenerateActiveSet(
                f"active constraint Gram matrix is ill-conditioned (working set {tuple(W)})")
        HinvAT = cho_solve(self.chol, A.T)
        S = A @ HinvAT
        mu = np.linalg.solve(S, b - A @ self.Hinv_c)
        d = -self.Hinv_c - HinvAT @ mu
        return d, mu


def _independent_subset(fs: LinearizedFeasibleSet, candidates):
    W = []
    for j in candidates:
        A = np.vstack([fs.A_eq, fs.A_ineq[W + [j]]])
        sv = np.linalg.svd(A, compute_uv=False)
        if A.shape[0] <= A.shape[1] and sv[-1] > RANK_TOL * max(sv[0], 1.0):
            W.append(j)
    return W


def _feas_tol(fs, d):
    return ACTIVE_TOL * np.maximum(1.0, np.maximum(np.abs(fs.b_ineq), np.abs(fs.A_ineq @ d)))


def _primal_active_set(kernel: _Kernel, d, W, max_iter):
    """Primal active-set iterations from a feasible ``d`` with working set ``W``.

    Returns (d, mu, W, iterations) where mu stacks equality multipliers
    followed by the multipliers of the rows in W (in order).
    """
    fs = kernel.fs
    p = fs.p
    W = sorted(W)
    scale = 1.0 + np.linalg.norm(kernel.c)
    for it in range(1, max_iter + 1):
        d_hat, mu = kernel.solve(W)
        step_dir = d_hat - d
        if np.linalg.norm(step_dir) <= 1e-13 * (1.0 + np.linalg.norm(d)):
            lam_W = mu[p:]
            if lam_W.size == 0 or lam_W.min() >= -1e-12 * scale:
                return d_hat, mu, W, it
            # drop the most negative multiplier; argmin keeps the lowest index on ties
            W.pop(int(np.argmin(lam_W)))
            continue
        Ap = fs.A_ineq @ step_dir
        slack = np.maximum(-(fs.b_ineq + fs.A_ineq @ d), 0.0)
        step, block = 1.0, None
        in_W = set(W)
        for j in range(fs.m):
            if j in in_W or Ap[j] <= 1e-14 * np.linalg.norm(step_dir) * (1 + np.linalg.norm(fs.A_ineq[j])):
                continue
            ratio = slack[j] / Ap[j]
            if ratio < step:
                step, block = ratio, j
        d = d + step * step_dir
        if block is not None:
            W = sorted(W + [block])
    raise MaxQpIterations(f"active-set method did not finish in {max_iter} iterations")


def _phase_one(fs: LinearizedFeasibleSet, max_iter):
    """Feasible point of ``fs`` or InfeasibleLinearization."""
    n, m, p = fs.n, fs.m, fs.p
    if p:
        d0 = -fs.A_eq.T @ np.linalg.solve(fs.A_eq @ fs.A_eq.T, fs.b_eq)
    else:
        d0 = np.zeros(n)
    tau0 = max(0.0, float(np.max(fs.ineq_values(d0)))) if m else 0.0
    if tau0 == 0.0:
        return d0, 0
    big = 1e6 * max(1.0, tau0, np.linalg.norm(d0))
    aux = LinearizedFeasibleSet(
        A_ineq=np.vstack([np.hstack([fs.A_ineq, -np.ones((m, 1))]),
                          np.hstack([np.zeros((1, n)), -np.ones((1, 1))])]),
        b_ineq=np.concatenate([fs.b_ineq, [0.0]]),
        A_eq=np.hstack([fs.A_eq, np.zeros((p, 1))]),
        b_eq=fs.b_eq,
    )
    c_aux = np.zeros(n + 1)
    c_aux[-1] = big
    kernel = _Kernel(np.eye(n + 1), c_aux, aux)
    x, _, W, iters = _primal_active_set(kernel, np.append(d0, tau0), [], max_iter)
    d, tau = x[:n], x[-1]
    rows = [j for j in W if j < m]
    if tau <= ACTIVE_TOL * max(1.0, tau0) and (p or rows):
        # the large penalty leaves ~1e-9 cancellation in the active rows; snap back onto them
        A = np.vstack([fs.A_eq, fs.A_ineq[rows]])
        r = np.concatenate([fs.b_eq, fs.b_ineq[rows]]) + A @ d
        d = d - A.T @ np.linalg.lstsq(A @ A.T, r, rcond=None)[0]
    viol = np.max(fs.ineq_values(d) - _feas_tol(fs, d)) if m else 0.0
    if tau > ACTIVE_TOL * max(1.0, tau0) or viol > 0:
        raise InfeasibleLinearization(
            f"linearized constraints are infeasible (residual shift {tau:.3e})")
    return d, iters


def solve_strictly_convex_qp(H, c, fs: LinearizedFeasibleSet, warm_start=None) -> QpSolution:
    """Unique minimizer of 1/2 d'Hd + c'd over ``fs`` with KKT multipliers.

    Stationarity reads ``H d + c + A_ineq' lam + A_eq' nu = 0``.
    ``warm_start`` is an optional iterable of inequality indices expected to
    be active; it only affects the number of iterations.
    """
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    n, m, p = fs.n, fs.m, fs.p
    max_iter = 10 * (n + m + p)
    kernel = _Kernel(H, c, fs)

    start = None
    total = 0
    if warm_start is not None and m:
        W0 = _independent_subset(fs, sorted(set(int(j) for j in warm_start)))
        d_try, _ = kernel.solve(W0)
        total += 1
        if np.all(fs.ineq_values(d_try) <= _feas_tol(fs, d_try)):
            start = (d_try, W0)
    if start is None:
        d_try, _ = kernel.solve([])
        total += 1
        if m == 0 or np.all(fs.ineq_values(d_try) <= _feas_tol(fs, d_try)):
            start = (d_try, [])
        else:
            d_feas, it1 = _phase_one(fs, max_iter)
            total += it1
            active = np.flatnonzero(np.abs(fs.ineq_values(d_feas)) <= _feas_tol(fs, d_feas))
            start = (d_feas, _independent_subset(fs, list(active)))

    d, mu, W, iters = _primal_active_set(kernel, start[0], start[1], max_iter)
    total += iters
    lam = np.zeros(m)
    lam[W] = np.maximum(mu[p:], 0.0)
    nu = mu[:p].copy()
    sol = QpSolution(d=d, lambda_mult=lam, nu_mult=nu, active_set=(),
                     iterations=total, working_set=tuple(W))
    sol.active_set = extract_active_set(sol, fs)
    return sol


def extract_active_set(solution: QpSolution, fs: LinearizedFeasibleSet | None = None) -> tuple:
    """Inequality rows with b_j + A_j d = 0 (to 1e-9) at the solution.

    Without the feasible set only the working set recorded by the solver
    is available, which is returned instead.
    """
    if fs is None:
        return tuple(solution.working_set)
    if fs.m == 0:
        return ()
    vals = fs.ineq_values(solution.d)
    return tuple(int(j) for j in np.flatnonzero(np.abs(vals) <= _feas_tol(fs, solution.d)))


def project_from_evaluation(ev: Evaluation, alpha: float, warm_start=None) -> QpSolution:
    fs = LinearizedFeasibleSet.from_evaluation(ev)
    H = np.eye(ev.z.size) / alpha
    return solve_strictly_convex_qp(H, ev.grad, fs, warm_start=warm_start)


def project_onto_linearization(problem: NlpProblem, z, alpha: float,
                               warm_start=None) -> QpSolution:
    """Euclidean projection of ``-alpha * grad J(z)`` onto the linearized set at z.

    Solved as the QP with ``H = I / alpha`` and ``c = grad J(z)``, so the
    returned multipliers satisfy ``d / alpha + grad J + jac_g lam + jac_h nu = 0``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return project_from_evaluation(evaluate(problem, z), alpha, warm_start)
