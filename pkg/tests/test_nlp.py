import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgsqp.errors import DerivativeMismatch, NonFiniteEvaluation, ShapeMismatch
from pgsqp.mpc import CondensedEvaluator, MpcProblem
from pgsqp.nlp import (KktResidual, NlpProblem, PrimalDualState, ProblemDims, SolverConfig,
                       check_termination, evaluate, kkt_residual, validate_problem)
from pgsqp.pendulum import BenchmarkConfig, pendulum_model, terminal_weight
from pgsqp.problems import get_problem, problem_names


def _half_norm(n=2, grad=None):
    return NlpProblem(ProblemDims(n), lambda z: 0.5 * z @ z, grad or (lambda z: z))


def test_dims_validation():
    with pytest.raises(ValueError):
        ProblemDims(0)
    with pytest.raises(ValueError):
        ProblemDims(2, -1, 0)
    with pytest.raises(ValueError):
        ProblemDims(2, 0, 3)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(sigma1=0.3, sigma2=0.2)
    with pytest.raises(ValueError):
        SolverConfig(sigma2=0.5)
    with pytest.raises(ValueError):
        SolverConfig(alpha=0.0)
    with pytest.raises(ValueError):
        SolverConfig(tol_feasibility=0.0)


def test_residual_at_circle_optimum():
    bp = get_problem("circle")
    z = np.array([2.0, 1.0]) / np.sqrt(5.0)
    # 2(z - (2,1)) + 2 nu z = 0 along z gives nu = sqrt(5) - 1
    state = PrimalDualState(z, np.zeros(0), np.array([np.sqrt(5.0) - 1.0]), np.zeros(0))
    res = kkt_residual(bp.nlp, state)
    for field in (res.stationarity, res.ineq_feasibility, res.eq_feasibility, res.complementarity):
        assert field <= 1e-12


def test_residual_unconstrained_examples():
    prob = _half_norm()
    res = kkt_residual(prob, PrimalDualState.primal(prob.dims, np.zeros(2)))
    assert res == KktResidual(0.0, 0.0, 0.0, 0.0)
    res = kkt_residual(prob, PrimalDualState.primal(prob.dims, np.array([1.0, 0.0])))
    assert res.stationarity == 1.0
    assert res.feasibility == 0.0 and res.complementarity == 0.0


@pytest.mark.parametrize("name", problem_names())
def test_residual_zero_at_builtin_solutions(name):
    bp = get_problem(name)
    if bp.lifted is not None or bp.multipliers is None:
        pytest.skip("lifted problems carry multipliers of the base problem")
    m = bp.nlp.dims.m
    state = PrimalDualState(bp.solution, bp.multipliers[:m], bp.multipliers[m:], np.zeros(m))
    res = kkt_residual(bp.nlp, state)
    assert max(res.stationarity, res.feasibility, res.complementarity) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_residual_fields_nonnegative(seed):
    rng = np.random.default_rng(seed)
    bp = get_problem(problem_names()[seed % len(problem_names())])
    d = bp.nlp.dims
    state = PrimalDualState(rng.standard_normal(d.n), np.abs(rng.standard_normal(d.m)),
                            rng.standard_normal(d.p), np.abs(rng.standard_normal(d.m)))
    res = kkt_residual(bp.nlp, state)
    vals = np.array([res.stationarity, res.ineq_feasibility, res.eq_feasibility,
                     res.complementarity])
    assert np.all(np.isfinite(vals)) and np.all(vals >= 0)


def test_termination_examples():
    cfg = SolverConfig()
    assert check_termination(None, KktResidual(0.0, 0.0, 0.0, 0.0), cfg)
    assert not check_termination(None, KktResidual(1e-5, 0.0, 0.0, 0.0), cfg)
    assert check_termination(None, KktResidual(5e-7, 1e-9, 0.0, 0.0), cfg)
    assert not check_termination(None, KktResidual(5e-7, 0.0, 1e-7, 0.0), cfg)


def test_non_finite_callback_is_an_error():
    prob = NlpProblem(ProblemDims(1), lambda z: np.log(z[0]), lambda z: 1 / z)
    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(NonFiniteEvaluation):
            evaluate(prob, np.array([-1.0]))


def test_wrong_shape_is_an_error():
    prob = NlpProblem(ProblemDims(2), lambda z: 0.5 * z @ z, lambda z: z[:1])
    with pytest.raises(ShapeMismatch):
        evaluate(prob, np.zeros(2))


def test_validate_passes_on_correct_gradient():
    report = validate_problem(_half_norm(3), np.array([0.3, -1.0, 2.0]))
    assert all(c.passed for c in report.values())


def test_validate_flags_wrong_gradient():
    with pytest.raises(DerivativeMismatch) as info:
        validate_problem(_half_norm(2, grad=lambda z: 2 * z), np.array([1.0, -2.0]))
    name, row, col, analytic, numeric = info.value.worst
    assert name == "objective_gradient"
    assert analytic == pytest.approx(2 * numeric)


@pytest.mark.parametrize("name", problem_names())
def test_validate_builtin_problems(name):
    bp = get_problem(name)
    rng = np.random.default_rng(7)
    for _ in range(5):
        validate_problem(bp.nlp, bp.z0 + 0.5 * rng.standard_normal(bp.z0.size))


def test_validate_pendulum_evaluator_at_zero_input():
    cfg = BenchmarkConfig()
    problem = MpcProblem(pendulum_model(cfg.params), cfg.N, np.diag(cfg.Q),
                         np.atleast_2d(cfg.R), terminal_weight(cfg), -15.0, 15.0, cfg.c,
                         np.array(cfg.x0))
    ev = CondensedEvaluator(problem)
    report = validate_problem(ev.nlp, ev.initial_point(np.zeros(cfg.N)))
    assert all(c.passed for c in report.values())
