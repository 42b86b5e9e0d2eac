"""Augmented Lagrangian merit, slack bookkeeping, penalty update, line search.

The merit function is

    L_aug(z, lam, nu, s) = J + (g + s)'lam + h'nu + rho/2 |g + s|^2 + rho/2 |h|^2

and ``phi(t)`` is its restriction to the segment from the current iterate
along the joint step ``(d_z, d_lam, d_nu, d_s)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import LineSearchFailure, PenaltyDiverged, PenaltyUndefined
from .nlp import (NlpProblem, PrimalDualState, SolverConfig, StepDirection, eval_eq,
                  eval_ineq, eval_objective, evaluate)

RHO_MAX = 1e18
EPS = np.finfo(float).eps
SLOPE_FLOOR = 1e-2 * EPS
# relative rounding level of a merit value; decreases below it are not resolvable
NOISE_REL = 10 * EPS


def merit_noise(phi0):
    return NOISE_REL * max(1.0, abs(phi0))


def compute_slack(g_val, lam, rho):
    """Slacks minimizing the merit in s alone, subject to s >= 0."""
    g_val = np.asarray(g_val, dtype=float)
    if rho == 0:
        return np.maximum(0.0, -g_val)
    return np.maximum(0.0, -g_val - np.asarray(lam, dtype=float) / rho)


def slack_variation(g_val, jac_g_t_dz, s):
    """d_s such that g + jac_g' d_z + s + d_s = 0."""
    return -(np.asarray(g_val) + np.asarray(jac_g_t_dz) + np.asarray(s))


def augmented_lagrangian(J, g, h, lam, nu, s, rho):
    gs = g + s
    return J + gs @ lam + h @ nu + 0.5 * rho * (gs @ gs + h @ h)


def _shifted(state: PrimalDualState, step: StepDirection, t):
    return (state.z + t * step.d_z, state.lam + t * step.d_lam,
            state.nu + t * step.d_nu, state.s + t * step.d_s)


def merit_value(problem: NlpProblem, state: PrimalDualState, step: StepDirection,
                t: float, rho: float) -> float:
    z, lam, nu, s = _shifted(state, step, t)
    return augmented_lagrangian(eval_objective(problem, z), eval_ineq(problem, z),
                                eval_eq(problem, z), lam, nu, s, rho)


def phi_prime_zero_from_values(grad, g, h, state: PrimalDualState, step: StepDirection, rho):
    """Closed-form phi'(0); valid when the step satisfies the slack and
    linearized equality relations (g + jac_g'd_z + s + d_s = 0, h + jac_h'd_z = 0)."""
    gs = g + state.s
    return (step.d_z @ grad - gs @ (state.lam - step.d_lam) - rho * (gs @ gs)
            - h @ (state.nu - step.d_nu) - rho * (h @ h))


def merit_derivative_at_zero(problem: NlpProblem, state: PrimalDualState,
                             step: StepDirection, rho: float) -> float:
    ev = evaluate(problem, state.z)
    return phi_prime_zero_from_values(ev.grad, ev.g, ev.h, state, step, rho)


def directional_derivative(ev, lam, nu, s, step: StepDirection, rho: float) -> float:
    """Derivative of the augmented Lagrangian along ``step`` at the point ``ev``.

    Unlike the closed form this does not assume the subproblem's linearized
    constraints hold exactly, so it stays accurate when the step is tiny.
    """
    gs = ev.g + s
    grad_z = ev.grad + ev.jac_g @ (lam + rho * gs) + ev.jac_h @ (nu + rho * ev.h)
    return float(step.d_z @ grad_z + step.d_lam @ gs + step.d_nu @ ev.h
                 + step.d_s @ (lam + rho * gs))


def slope_magnitude(ev, lam, nu, s, step: StepDirection, rho: float) -> float:
    """Sum of the absolute terms of ``directional_derivative``.

    Rounding in the computed slope is about eps times this, so a slope at
    that level is pure cancellation.
    """
    gs = ev.g + s
    a = np.abs
    grad_z = (a(ev.grad) + a(ev.jac_g) @ a(lam + rho * gs) + a(ev.jac_h) @ a(nu + rho * ev.h))
    return float(a(step.d_z) @ grad_z + a(step.d_lam) @ a(gs) + a(step.d_nu) @ a(ev.h)
                 + a(step.d_s) @ a(lam + rho * gs))


def merit_derivative(problem: NlpProblem, state: PrimalDualState, step: StepDirection,
                     t: float, rho: float) -> float:
    """phi'(t) from the full gradient of the augmented Lagrangian."""
    z, lam, nu, s = _shifted(state, step, t)
    return directional_derivative(evaluate(problem, z), lam, nu, s, step, rho)


def update_penalty(rho_prev: float, phi_prime_zero_at: Callable[[float], float], d_z,
                   alpha: float, g_plus_s, h_val, d_lambda, d_nu, threshold=None,
                   allowance=0.0) -> float:
    """Keep rho if phi'(0) is already sufficiently negative, otherwise raise it.

    The default target is ``phi'(0) <= -|d_z|^2 / (2 alpha)``; the SQP driver
    passes ``-d_z'H d_z / 2`` through ``threshold``. On an increase the new
    value is ``max(rho_hat, 2 rho_prev)`` with
    ``rho_hat = 2 |[d_lam; d_nu]| / |[g + s; h]|``.

    That choice guarantees the target only if the subproblem is solved
    exactly. ``allowance`` (a number, or a function of rho) bounds the slope
    error caused by the subproblem's KKT residuals and is granted in the
    final check.
    """
    if threshold is None:
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        threshold = -float(np.dot(d_z, d_z)) / (2.0 * alpha)
    if phi_prime_zero_at(rho_prev) <= threshold:
        return rho_prev
    viol = np.sqrt(np.dot(g_plus_s, g_plus_s) + np.dot(h_val, h_val))
    if viol == 0.0:
        raise PenaltyUndefined("penalty increase requested at a feasible point")
    dual = np.sqrt(np.dot(d_lambda, d_lambda) + np.dot(d_nu, d_nu))
    rho = max(2.0 * dual / viol, 2.0 * rho_prev)
    if rho > RHO_MAX:
        raise PenaltyDiverged(f"penalty parameter exceeded {RHO_MAX:.0e}")
    room = allowance(rho) if callable(allowance) else allowance
    if not phi_prime_zero_at(rho) <= threshold + room:
        raise PenaltyUndefined("penalty update failed to produce a descent direction")
    return rho


@dataclass
class LineSearchResult:
    t: float
    evaluations: int
    phi_t: float
    # condition name -> passed, for the conditions that were checked
    satisfied: dict


def _cubic_step(phi0, dphi0, t, f_t, t_prev, f_prev):
    r1 = f_t - phi0 - dphi0 * t
    r2 = f_prev - phi0 - dphi0 * t_prev
    denom = t - t_prev
    a = (r1 / t**2 - r2 / t_prev**2) / denom
    b = (-t_prev * r1 / t**2 + t * r2 / t_prev**2) / denom
    if a == 0.0:
        return -dphi0 / (2.0 * b) if b != 0 else 0.5 * t
    disc = b * b - 3.0 * a * dphi0
    if not disc >= 0:
        return 0.5 * t
    return (-b + np.sqrt(disc)) / (3.0 * a)


def wolfe_line_search(phi: Callable[[float], float], phi_prime: Callable[[float], float] | None,
                      phi_prime_zero: float, config: SolverConfig,
                      phi_zero: float | None = None,
                      slope_scale: float | None = None) -> LineSearchResult:
    """Backtracking from t = 1 with safeguarded polynomial interpolation.

    The first backtrack uses quadratic interpolation, later ones a cubic
    through the last two trial values; every trial is clipped into
    ``[0.1 t, 0.5 t]``. With ``config.simplified_line_search`` off, a
    bracketing phase also enforces the curvature condition.

    Near a solution the predicted decrease ``sigma1 * t * phi'(0)`` can drop
    below the rounding level of ``phi`` itself. A trial whose predicted
    decrease is unresolvable is then accepted when ``phi(t)`` does not exceed
    ``phi(0)`` by more than that rounding level; such steps are flagged with
    ``satisfied["noise_floor"]``.

    The slope is rejected as degenerate when it is within rounding of zero:
    below ``eps * slope_scale`` when the caller knows the magnitude of the
    terms it was summed from, below a tiny absolute floor otherwise.
    """
    phi0 = phi(0.0) if phi_zero is None else phi_zero
    evals = 0 if phi_zero is not None else 1
    if not np.isfinite(phi0):
        raise LineSearchFailure("merit is not finite at t = 0")
    floor = SLOPE_FLOOR if slope_scale is None else EPS * slope_scale
    if not phi_prime_zero < 0 or -phi_prime_zero <= floor:
        raise LineSearchFailure(f"phi'(0) = {phi_prime_zero:.3e} is not a usable descent slope")
    s1, s2 = config.sigma1, config.sigma2
    noise = merit_noise(phi0)

    def armijo(t, f):
        return f - phi0 <= s1 * t * phi_prime_zero

    def within_noise(t, f):
        return -s1 * t * phi_prime_zero <= noise and f - phi0 <= noise

    def accept(t, f):
        return np.isfinite(f) and (armijo(t, f) or within_noise(t, f))

    t, t_prev, f_prev = 1.0, None, None
    f_t = phi(t)
    evals += 1
    while not accept(t, f_t):
        if not np.isfinite(f_t):
            t_new = 0.1 * t
        elif t_prev is None:
            t_new = -phi_prime_zero * t * t / (2.0 * (f_t - phi0 - phi_prime_zero * t))
        else:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                t_new = _cubic_step(phi0, phi_prime_zero, t, f_t, t_prev, f_prev)
        if not np.isfinite(t_new):
            t_new = 0.5 * t
        t_new = min(max(t_new, 0.1 * t), 0.5 * t)
        t_prev, f_prev = t, f_t
        t = t_new
        if t <= config.t_min:
            raise LineSearchFailure(f"step size fell below t_min = {config.t_min:g}")
        f_t = phi(t)
        evals += 1

    flags = {"armijo": bool(armijo(t, f_t))}
    if not flags["armijo"]:
        flags["noise_floor"] = True
    if config.simplified_line_search or phi_prime is None or not flags["armijo"]:
        return LineSearchResult(t, evals, f_t, flags)

    def curvature_ok(t, d):
        return abs(d) <= -s2 * phi_prime_zero or (t == 1.0 and d <= -s2 * phi_prime_zero)

    d_t = phi_prime(t)
    if curvature_ok(t, d_t):
        return LineSearchResult(t, evals, f_t, {"armijo": True, "curvature": True})
    # zoom over a bracket holding a strong-Wolfe point
    if d_t < 0:
        lo, f_lo, hi = t, f_t, t_prev
    else:
        lo, f_lo, hi = 0.0, phi0, t
    for _ in range(60):
        width = hi - lo
        t = lo + 0.5 * width
        t = min(max(t, lo + 0.1 * width), hi - 0.1 * width)
        f_t = phi(t)
        d_t = phi_prime(t)
        evals += 1
        if not armijo(t, f_t) or f_t >= f_lo:
            hi = t
            continue
        if curvature_ok(t, d_t):
            return LineSearchResult(t, evals, f_t, {"armijo": True, "curvature": True})
        if d_t * (hi - lo) >= 0:
            hi = lo
        lo, f_lo = t, f_t
        if abs(hi - lo) <= config.t_min:
            break
    raise LineSearchFailure("could not satisfy the curvature condition")
