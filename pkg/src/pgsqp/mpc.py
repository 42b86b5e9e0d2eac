"""Condensed (single-shooting) nonlinear MPC with squared-slack bounds.

Decision variable of one MPC instance: ``v = [u; y_a; y_b; y_c]`` where ``u``
stacks the N inputs and the slacks lift

    a - u <= 0,   u - b <= 0,   1/2 x_N' P x_N - c <= 0

to the equalities

    p(v) = [a - u + y_a^2/2;  u - b + y_b^2/2;  x_N'P x_N/2 - c + y_c^2/2] = 0.

The Gram matrix of the lifted constraint Jacobian has a closed-form inverse
made of diagonal blocks and one rank-one correction, so a projection step
costs O(N) after the adjoint gradient sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DareDiverged, DegenerateSlacks, NonFiniteEvaluation
from .nlp import Evaluation, NlpProblem, ProblemDims
from .qp import QpSolution
from .slack import SLACK_FLOOR, init_slack_variables


@dataclass
class DynamicsModel:
    nx: int
    nu: int
    step: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_u: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "model"
    # optional (Fs, Gs) for a whole trajectory at once: (xs[:N], U) -> stacked arrays
    batch_jacobians: Callable | None = None


def linear_model(A, B, name="linear") -> DynamicsModel:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    return DynamicsModel(A.shape[0], B.shape[1], lambda x, u: A @ x + B @ u,
                         lambda x, u: A, lambda x, u: B, name)


@dataclass
class MpcProblem:
    model: DynamicsModel
    N: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: float
    x0: np.ndarray

    def __post_init__(self):
        nx, nu = self.model.nx, self.model.nu
        if self.N < 1:
            raise ValueError("horizon must be positive")
        self.Q = np.asarray(self.Q, dtype=float).reshape(nx, nx)
        self.R = np.asarray(self.R, dtype=float).reshape(nu, nu)
        self.P = np.asarray(self.P, dtype=float).reshape(nx, nx)
        for name in ("Q", "R", "P"):
            M = getattr(self, name)
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() < -1e-12:
                raise ValueError(f"{name} must be symmetric positive semidefinite")
        n_u = self.N * nu
        self.a = np.broadcast_to(np.asarray(self.a, dtype=float), (n_u,)).copy()
        self.b = np.broadcast_to(np.asarray(self.b, dtype=float), (n_u,)).copy()
        if np.any(self.a >= self.b):
            raise ValueError("need a < b componentwise")
        if self.c <= 0:
            raise ValueError("terminal level c must be positive")
        self.x0 = np.asarray(self.x0, dtype=float).reshape(nx)

    @property
    def n_u(self):
        return self.N * self.model.nu


class FlopCounter:
    """Tally of floating point operations charged by the instrumented kernels."""

    def __init__(self):
        self.count = 0

    def add(self, n):
        self.count += int(n)


def _charge(counter, n):
    if counter is not None:
        counter.add(n)


def _simulate(model: DynamicsModel, x0, u):
    """States x_0..x_N as an (N+1, nx) array."""
    U = np.asarray(u, dtype=float).reshape(-1, model.nu)
    xs = np.empty((U.shape[0] + 1, model.nx))
    xs[0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k, uk in enumerate(U):
            xs[k + 1] = model.step(xs[k], uk)
    if not np.all(np.isfinite(xs)):
        raise NonFiniteEvaluation("rollout diverged")
    return xs


def rollout(model: DynamicsModel, x0, u):
    """Stacked predicted states [x_1; ...; x_N]."""
    return _simulate(model, np.asarray(x0, dtype=float), u)[1:].reshape(-1)


def _objective_from_states(problem: MpcProblem, xs, U):
    stage = np.einsum("ki,ij,kj->", xs[1:-1], problem.Q, xs[1:-1])
    term = xs[-1] @ problem.P @ xs[-1]
    inputs = np.einsum("ki,ij,kj->", U, problem.R, U)
    return 0.5 * (stage + term + inputs)


def condensed_objective(problem: MpcProblem, u) -> float:
    U = np.asarray(u, dtype=float).reshape(problem.N, problem.model.nu)
    return float(_objective_from_states(problem, _simulate(problem.model, problem.x0, U), U))


def _linearize(model, xs, U):
    if model.batch_jacobians is not None:
        return model.batch_jacobians(xs[:U.shape[0]], U)
    Fs = np.array([model.jac_x(xs[k], U[k]) for k in range(U.shape[0])])
    Gs = np.array([model.jac_u(xs[k], U[k]) for k in range(U.shape[0])]).reshape(
        U.shape[0], model.nx, model.nu)
    return Fs, Gs


def adjoint_flops(N, nx, nu):
    """Operation count charged by one adjoint sweep."""
    return 2 * nx * nx + N * (4 * nx * nu + 2 * nu * nu + nu) + (N - 1) * (6 * nx * nx + nx)


def _adjoint_sweep(problem: MpcProblem, xs, U, Fs, Gs, counter=None):
    """Objective gradient and terminal-constraint gradient in one backward pass."""
    N, nx, nu = problem.N, problem.model.nx, problem.model.nu
    grad = np.empty((N, nu))
    q = np.empty((N, nu))
    Ft = Fs.transpose(0, 2, 1)
    Gt = Gs.transpose(0, 2, 1)
    RU = U @ problem.R.T
    Qx = xs @ problem.Q.T
    # column 0 carries the objective adjoint, column 1 the terminal one
    lm = np.empty((nx, 2))
    lm[:, 0] = lm[:, 1] = problem.P @ xs[N]
    for k in range(N - 1, -1, -1):
        gl = Gt[k] @ lm
        grad[k] = gl[:, 0] + RU[k]
        q[k] = gl[:, 1]
        if k > 0:
            lm = Ft[k] @ lm
            lm[:, 0] += Qx[k]
    # the charge is the per-stage tally of the loop above
    _charge(counter, adjoint_flops(N, nx, nu))
    return grad.reshape(-1), q.reshape(-1)


def condensed_gradient(problem: MpcProblem, u):
    U = np.asarray(u, dtype=float).reshape(problem.N, problem.model.nu)
    xs = _simulate(problem.model, problem.x0, U)
    return _adjoint_sweep(problem, xs, U, *_linearize(problem.model, xs, U))[0]


def terminal_gradient(problem: MpcProblem, u):
    U = np.asarray(u, dtype=float).reshape(problem.N, problem.model.nu)
    xs = _simulate(problem.model, problem.x0, U)
    return _adjoint_sweep(problem, xs, U, *_linearize(problem.model, xs, U))[1]


def structured_gram_apply(y_a, y_b, y_c, q, rhs, counter=None):
    """Solve ``(grad_p' grad_p) x = rhs`` with the closed-form inverse.

    With ``den = y_a^2 + y_b^2 + y_a^2 y_b^2`` the inverse uses the diagonal
    blocks ``D = 1/den``, ``A = y_a^2/den``, ``B = y_b^2/den`` and the scalar
    ``r = 1 / (sum(q^2 y_a^2 y_b^2 / den) + y_c^2)`` for the rank-one
    coupling through ``q``.
    """
    ya2 = np.square(y_a)
    yb2 = np.square(y_b)
    k = ya2.size
    den = ya2 + yb2 + ya2 * yb2
    if not np.all(den > 0):
        raise DegenerateSlacks("both bound slacks vanish for some input")
    D = 1.0 / den
    A = ya2 * D
    B = yb2 * D
    schur = float(np.sum(q * q * ya2 * B)) + float(y_c) ** 2
    if not schur > 0:
        raise DegenerateSlacks("terminal slack and terminal gradient both vanish")
    r = 1.0 / schur
    ra, rb, rc = rhs[:k], rhs[k:2 * k], rhs[2 * k]
    Bq = B * q
    Aq = A * q
    out_c = r * (Bq @ ra - Aq @ rb + rc)
    out = np.empty(2 * k + 1)
    out[:k] = (D + B) * ra + D * rb + Bq * out_c
    out[k:2 * k] = D * ra + (D + A) * rb - Aq * out_c
    out[2 * k] = out_c
    _charge(counter, 26 * k + 6)
    return out


def dense_gram(y_a, y_b, y_c, q):
    """The Gram matrix that ``structured_gram_apply`` inverts (for checks)."""
    k = np.size(y_a)
    I = np.eye(k)
    M = np.zeros((2 * k + 1, 2 * k + 1))
    M[:k, :k] = I + np.diag(np.square(y_a))
    M[k:2 * k, k:2 * k] = I + np.diag(np.square(y_b))
    M[:k, k:2 * k] = M[k:2 * k, :k] = -I
    M[:k, -1] = M[-1, :k] = -q
    M[k:2 * k, -1] = M[-1, k:2 * k] = q
    M[-1, -1] = q @ q + float(y_c) ** 2
    return M


@dataclass
class _Linearization:
    xs: np.ndarray
    Fs: np.ndarray | None = None
    Gs: np.ndarray | None = None
    grad: np.ndarray | None = None
    q: np.ndarray | None = None


class CondensedEvaluator:
    """Lifted equality-only NLP over ``v = [u; y_a; y_b; y_c]``.

    The rollout and the adjoint sweep of the last visited ``u`` are cached,
    so evaluating the objective, constraints and gradient at one point
    simulates the model once.
    """

    def __init__(self, problem: MpcProblem):
        self.problem = problem
        k = problem.n_u
        self.k = k
        self.dims = ProblemDims(3 * k + 1, 0, 2 * k + 1)
        self._key = None
        self._lin = None
        self.rollouts = 0
        self.nlp = NlpProblem(self.dims, self.objective, self.gradient,
                              eval_eq=self.constraint, eval_eq_jacobian=self.constraint_jacobian,
                              name="mpc-lifted")

    def split(self, v):
        v = np.asarray(v, dtype=float)
        k = self.k
        return v[:k], v[k:2 * k], v[2 * k:3 * k], v[3 * k]

    def _data(self, u, derivatives=False, counter=None):
        key = u.tobytes()
        if key != self._key:
            U = u.reshape(self.problem.N, self.problem.model.nu)
            self._lin = _Linearization(_simulate(self.problem.model, self.problem.x0, U))
            self._key = key
            self.rollouts += 1
        lin = self._lin
        if derivatives and lin.grad is None:
            U = u.reshape(self.problem.N, self.problem.model.nu)
            lin.Fs, lin.Gs = _linearize(self.problem.model, lin.xs, U)
            lin.grad, lin.q = _adjoint_sweep(self.problem, lin.xs, U, lin.Fs, lin.Gs, counter)
        elif derivatives:
            # cached sweep: charge what it cost
            m = self.problem.model
            _charge(counter, adjoint_flops(self.problem.N, m.nx, m.nu))
        return lin

    def states(self, v):
        u = self.split(v)[0]
        return self._data(u).xs

    def terminal_value(self, v):
        xN = self.states(v)[-1]
        return 0.5 * float(xN @ self.problem.P @ xN)

    def objective(self, v):
        u = self.split(v)[0]
        U = u.reshape(self.problem.N, self.problem.model.nu)
        return float(_objective_from_states(self.problem, self._data(u).xs, U))

    def gradient(self, v):
        u = self.split(v)[0]
        out = np.zeros(self.dims.n)
        out[:self.k] = self._data(u, derivatives=True).grad
        return out

    def terminal_gradient(self, v):
        return self._data(self.split(v)[0], derivatives=True).q

    def constraint(self, v):
        u, ya, yb, yc = self.split(v)
        pb = self.problem
        return np.concatenate([pb.a - u + 0.5 * ya * ya, u - pb.b + 0.5 * yb * yb,
                               [self.terminal_value(v) - pb.c + 0.5 * yc * yc]])

    def constraint_jacobian(self, v):
        u, ya, yb, yc = self.split(v)
        k = self.k
        jac = np.zeros((3 * k + 1, 2 * k + 1))
        I = np.eye(k)
        jac[:k, :k] = -I
        jac[:k, k:2 * k] = I
        jac[:k, -1] = self.terminal_gradient(v)
        jac[k:2 * k, :k] = np.diag(ya)
        jac[2 * k:3 * k, k:2 * k] = np.diag(yb)
        jac[-1, -1] = yc
        return jac

    def base_problem(self) -> NlpProblem:
        """The unlifted inequality form over ``u``; lifting it reproduces ``nlp``."""
        pb, k = self.problem, self.k

        def g(u):
            v = np.concatenate([u, np.zeros(2 * k + 1)])
            return np.concatenate([pb.a - u, u - pb.b, [self.terminal_value(v) - pb.c]])

        def jac_g(u):
            v = np.concatenate([u, np.zeros(2 * k + 1)])
            return np.hstack([-np.eye(k), np.eye(k), self.terminal_gradient(v)[:, None]])

        def pad(u):
            return np.concatenate([u, np.zeros(2 * k + 1)])

        return NlpProblem(ProblemDims(k, 2 * k + 1, 0),
                          lambda u: self.objective(pad(u)),
                          lambda u: self.gradient(pad(u))[:k],
                          eval_ineq=g, eval_ineq_jacobian=jac_g, name="mpc")

    def initial_point(self, u0, floor=SLACK_FLOOR):
        u0 = np.asarray(u0, dtype=float).reshape(self.k)
        pb = self.problem
        v = np.concatenate([u0, np.zeros(2 * self.k + 1)])
        y_a = init_slack_variables(pb.a - u0, floor)
        y_b = init_slack_variables(u0 - pb.b, floor)
        y_c = init_slack_variables([self.terminal_value(v) - pb.c], floor)
        return np.concatenate([u0, y_a, y_b, y_c])

    def projector(self, counter: FlopCounter | None = None):
        """Step oracle for the iteration driver using the structured inverse."""
        def oracle(ev: Evaluation, alpha, warm_start=None):
            d, mu = mpc_projection_step(self, ev.z, alpha, counter)
            return QpSolution(d, np.zeros(0), mu, (), 0)
        return oracle


def mpc_projection_step(evaluator: CondensedEvaluator, v, alpha, counter=None):
    """Projected gradient step ``d_v`` and multipliers for the lifted MPC problem."""
    u, ya, yb, yc = evaluator.split(v)
    k = evaluator.k
    lin = evaluator._data(u, derivatives=True, counter=counter)
    g_u, q = lin.grad, lin.q
    p_val = evaluator.constraint(v)
    rhs = p_val / alpha
    rhs[:k] += g_u
    rhs[k:2 * k] -= g_u
    rhs[-1] -= q @ g_u
    _charge(counter, 2 * (2 * k + 1) + 4 * k + 2 * k + 6 * k)
    mu = structured_gram_apply(ya, yb, yc, q, rhs, counter)
    mu_a, mu_b, mu_c = mu[:k], mu[k:2 * k], mu[-1]
    d = np.empty(3 * k + 1)
    d[:k] = -alpha * (g_u - mu_a + mu_b + q * mu_c)
    d[k:2 * k] = -alpha * ya * mu_a
    d[2 * k:3 * k] = -alpha * yb * mu_b
    d[-1] = -alpha * yc * mu_c
    _charge(counter, 6 * k + 4 * k + 2)
    return d, mu


def solve_dare(A, B, Q, R, tol=1e-12, max_iter=10000):
    """Terminal weight from the Riccati fixed-point iteration started at Q."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        BtPA = B.T @ P @ A
        with np.errstate(over="ignore", invalid="ignore"):
            P_new = A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
            P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            break
        delta = np.max(np.abs(P_new - P))
        P = P_new
        if delta < tol * max(1.0, np.max(np.abs(P))):
            return P
    raise DareDiverged(f"Riccati iteration did not converge in {max_iter} sweeps")


def dare_residual(A, B, Q, R, P):
    BtPA = B.T @ P @ A
    return A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q - P
