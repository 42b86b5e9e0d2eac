"""Squared-slack lifting and the closed-form projection for equality-only NLPs.

An inequality ``g_j(z) <= 0`` is replaced by ``g_j(z) + y_j**2 / 2 = 0`` with
a free slack ``y_j``. The lifted problem has only equality constraints, and
projecting onto an affine set is a linear solve with the (m+p)-square Gram
matrix of the constraint Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import RankDeficientConstraints
from .nlp import Evaluation, NlpProblem, ProblemDims
from .qp import QpSolution

SLACK_FLOOR = 1e-3


class EqualityProjection(NamedTuple):
    d: np.ndarray
    mu: np.ndarray
    gram_dim: int


def equality_projection(grad, c_val, jac_c, alpha) -> EqualityProjection:
    """Project ``-alpha * grad`` onto ``{d : c_val + jac_c' d = 0}``.

    The multipliers solve ``(jac_c' jac_c) mu = c_val / alpha - jac_c' grad``
    and the step is ``d = -alpha * (grad + jac_c mu)``.
    """
    k = c_val.size
    if k == 0:
        return EqualityProjection(-alpha * grad, np.zeros(0), 0)
    gram = jac_c.T @ jac_c
    rhs = c_val / alpha - jac_c.T @ grad
    try:
        factor = cho_factor(gram)
    except LinAlgError:
        # one tiny shift absorbs roundoff; if the shift then carries a pivot
        # the Jacobian is rank deficient at the 1e-10 level
        shift = 1e-10 * max(1.0, float(np.trace(gram)) / k)
        try:
            factor = cho_factor(gram + shift * np.eye(k))
        except LinAlgError as exc:
            raise RankDeficientConstraints(
                "constraint Jacobian is rank deficient") from exc
        if np.min(np.diag(factor[0])) ** 2 <= 10.0 * shift:
            raise RankDeficientConstraints("constraint Jacobian is rank deficient")
    mu = cho_solve(factor, rhs)
    return EqualityProjection(-alpha * (grad + jac_c @ mu), mu, gram.shape[0])


@dataclass
class LiftedProblem:
    """Equality-only view of ``base`` over ``v = [z; y]``."""

    base: NlpProblem

    def __post_init__(self):
        d = self.base.dims
        self.n_base, self.m_base, self.p_base = d.n, d.m, d.p
        self.dims = ProblemDims(d.n + d.m, 0, d.m + d.p)
        self.nlp = NlpProblem(
            self.dims,
            eval_objective=lambda v: self.base.eval_objective(v[:self.n_base]),
            eval_objective_gradient=self._objective_gradient,
            eval_eq=self.constraint,
            eval_eq_jacobian=self.constraint_jacobian,
            name=f"{self.base.name}-lifted",
        )

    def split(self, v):
        v = np.asarray(v, dtype=float)
        return v[:self.n_base], v[self.n_base:]

    def _objective_gradient(self, v):
        z, _ = self.split(v)
        return np.concatenate([self.base.eval_objective_gradient(z), np.zeros(self.m_base)])

    def constraint(self, v):
        z, y = self.split(v)
        return np.concatenate([np.asarray(self.base.eval_ineq(z)) + 0.5 * y * y,
                               np.asarray(self.base.eval_eq(z))])

    def constraint_jacobian(self, v):
        z, y = self.split(v)
        n, m, p = self.n_base, self.m_base, self.p_base
        jac = np.zeros((n + m, m + p))
        jac[:n, :m] = self.base.eval_ineq_jacobian(z)
        jac[:n, m:] = self.base.eval_eq_jacobian(z)
        jac[n:, :m] = np.diag(y)
        return jac

    def initial_point(self, z0, floor=SLACK_FLOOR):
        z0 = np.asarray(z0, dtype=float)
        g0 = np.asarray(self.base.eval_ineq(z0), dtype=float)
        return np.concatenate([z0, init_slack_variables(g0, floor)])

    def projector(self):
        """Step oracle for the iteration driver using the closed form."""
        def oracle(ev: Evaluation, alpha, warm_start=None):
            proj = equality_projection(ev.grad, ev.h, ev.jac_h, alpha)
            return QpSolution(proj.d, np.zeros(0), proj.mu, (), 0)
        return oracle


def lift(problem: NlpProblem) -> LiftedProblem:
    return LiftedProblem(problem)


def init_slack_variables(g_val, floor=SLACK_FLOOR):
    """y_j = sqrt(2 max(floor, -g_j)); the floor keeps the slack Jacobian nonsingular."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    return np.sqrt(2.0 * np.maximum(floor, -np.asarray(g_val, dtype=float)))


def closed_form_projection(lifted: LiftedProblem, v, alpha):
    """Projected gradient step for the lifted problem and its multipliers.

    Returns ``(d_v, mu_G)`` with ``mu_G = [lambda_G; nu_G]``.
    """
    v = np.asarray(v, dtype=float)
    grad = lifted.nlp.eval_objective_gradient(v)
    proj = equality_projection(grad, lifted.constraint(v), lifted.constraint_jacobian(v), alpha)
    return proj.d, proj.mu


@dataclass
class MultiplierReport:
    min_lambda: float
    negative: tuple
    ok: bool


def check_multiplier_signs(lifted: LiftedProblem, mu, tol=1e-8) -> MultiplierReport:
    """Flag negative inequality multipliers at a converged lifted solution.

    A negative multiplier means the lifted iterate is a critical point that
    is not a KKT point of the original inequality problem.
    """
    lam = np.asarray(mu, dtype=float)[:lifted.m_base]
    neg = tuple(int(j) for j in np.flatnonzero(lam < -tol))
    return MultiplierReport(float(lam.min()) if lam.size else 0.0, neg, not neg)
