"""Built-in test problems with known solutions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnknownProblem
from .nlp import NlpProblem, ProblemDims
from .slack import LiftedProblem, lift


@dataclass
class BuiltinProblem:
    name: str
    nlp: NlpProblem
    z0: np.ndarray
    solution: np.ndarray
    alpha: float = 0.1
    # multipliers at the solution, [lam; nu]
    multipliers: np.ndarray | None = None
    lifted: LiftedProblem | None = None
    description: str = ""


def _unconstrained_quadratic():
    target = np.array([3.0, 4.0])
    nlp = NlpProblem(ProblemDims(2), lambda z: 0.5 * np.sum((z - target) ** 2),
                     lambda z: z - target, name="unconstrained-quadratic")
    return BuiltinProblem("unconstrained-quadratic", nlp, np.zeros(2), target, alpha=0.5,
                          multipliers=np.zeros(0),
                          description="1/2 |z - (3,4)|^2, no constraints")


_TARGET = np.array([2.0, 1.0])


def _circle_objective(z):
    return float(np.sum((z - _TARGET) ** 2))


def _circle_gradient(z):
    return 2.0 * (z - _TARGET)


def _circle():
    nlp = NlpProblem(ProblemDims(2, 0, 1), _circle_objective, _circle_gradient,
                     eval_eq=lambda z: np.array([z @ z - 1.0]),
                     eval_eq_jacobian=lambda z: 2.0 * z.reshape(2, 1), name="circle")
    return BuiltinProblem("circle", nlp, np.array([1.0, 0.0]), _TARGET / np.sqrt(5),
                          multipliers=np.array([np.sqrt(5) - 1]),
                          description="|z - (2,1)|^2 on the unit circle")


def _circle_inequality():
    nlp = NlpProblem(ProblemDims(2, 1, 0), _circle_objective, _circle_gradient,
                     eval_ineq=lambda z: np.array([z @ z - 1.0]),
                     eval_ineq_jacobian=lambda z: 2.0 * z.reshape(2, 1),
                     name="circle-inequality")
    return BuiltinProblem("circle-inequality", nlp, np.zeros(2), _TARGET / np.sqrt(5),
                          multipliers=np.array([np.sqrt(5) - 1]),
                          description="|z - (2,1)|^2 in the unit disk")


def _rosenbrock_equality():
    # Hock-Schittkowski problem 6
    nlp = NlpProblem(
        ProblemDims(2, 0, 1),
        lambda z: (1.0 - z[0]) ** 2,
        lambda z: np.array([-2.0 * (1.0 - z[0]), 0.0]),
        eval_eq=lambda z: np.array([10.0 * (z[1] - z[0] ** 2)]),
        eval_eq_jacobian=lambda z: np.array([[-20.0 * z[0]], [10.0]]),
        name="rosenbrock-equality")
    return BuiltinProblem("rosenbrock-equality", nlp, np.array([-1.2, 1.0]), np.ones(2),
                          alpha=0.1, multipliers=np.zeros(1),
                          description="(1 - z1)^2 s.t. 10 (z2 - z1^2) = 0")


_BOX_TARGET = np.array([2.0, -0.5, 0.3])


def _box_nlp():
    eye = np.eye(3)
    return NlpProblem(
        ProblemDims(3, 6, 0),
        lambda z: 0.5 * np.sum((z - _BOX_TARGET) ** 2),
        lambda z: z - _BOX_TARGET,
        eval_ineq=lambda z: np.concatenate([z - 1.0, -1.0 - z]),
        eval_ineq_jacobian=lambda z: np.hstack([eye, -eye]),
        name="box-qp")


def _box_qp():
    return BuiltinProblem("box-qp", _box_nlp(), np.zeros(3), np.array([1.0, -0.5, 0.3]),
                          alpha=0.5, multipliers=np.array([1.0, 0, 0, 0, 0, 0]),
                          description="1/2 |z - (2,-0.5,0.3)|^2 on [-1,1]^3")


def _box_qp_lifted():
    lifted = lift(_box_nlp())
    z_star = np.array([1.0, -0.5, 0.3])
    g_star = np.concatenate([z_star - 1.0, -1.0 - z_star])
    v_star = np.concatenate([z_star, np.sqrt(-2.0 * g_star)])
    return BuiltinProblem("box-qp-lifted", lifted.nlp, lifted.initial_point(np.zeros(3)),
                          v_star, alpha=0.5, multipliers=np.array([1.0, 0, 0, 0, 0, 0]),
                          lifted=lifted,
                          description="box-qp with squared-slack variables")


_REGISTRY = {
    "unconstrained-quadratic": _unconstrained_quadratic,
    "circle": _circle,
    "circle-inequality": _circle_inequality,
    "rosenbrock-equality": _rosenbrock_equality,
    "box-qp": _box_qp,
    "box-qp-lifted": _box_qp_lifted,
}


def problem_names():
    return sorted(_REGISTRY)


def get_problem(name: str) -> BuiltinProblem:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise UnknownProblem(f"unknown problem {name!r}; choose from {problem_names()}") from None
