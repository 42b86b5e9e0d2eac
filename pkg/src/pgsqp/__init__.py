"""Projected-gradient SQP variant for nonlinear programs, with a dense
active-set QP kernel, an augmented Lagrangian line search and a condensed
nonlinear MPC front end."""

from .errors import SolverError
from .nlp import NlpProblem, PrimalDualState, ProblemDims, SolverConfig, StepDirection
from .solver import HessianStrategy, SolveReport, Status, solve_sqp, solve_variant

__all__ = [
    "HessianStrategy",
    "NlpProblem",
    "PrimalDualState",
    "ProblemDims",
    "SolveReport",
    "SolverConfig",
    "SolverError",
    "Status",
    "StepDirection",
    "solve_sqp",
    "solve_variant",
]
__version__ = "0.1.0"
