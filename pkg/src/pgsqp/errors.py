"""Exception hierarchy shared by all solver modules."""


class SolverError(Exception):
    """Base class for every error raised by pgsqp."""


class NonFiniteEvaluation(SolverError):
    pass


class ShapeMismatch(SolverError):
    pass


class DerivativeMismatch(SolverError):
    """An analytic derivative disagrees with central finite differences.

    ``worst`` holds ``(callback_name, row, col, analytic, numeric)`` for the
    worst offending entry.
    """

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


class InfeasibleLinearization(SolverError):
    """The linearized constraint set of a subproblem is empty."""


class DegenerateActiveSet(SolverError):
    """Active constraint gradients are (numerically) linearly dependent."""


class MaxQpIterations(SolverError):
    pass


class PenaltyUndefined(SolverError):
    pass


class PenaltyDiverged(SolverError):
    pass


class LineSearchFailure(SolverError):
    pass


class RankDeficientConstraints(SolverError):
    pass


class DegenerateSlacks(SolverError):
    pass


class DareDiverged(SolverError):
    pass


class UnknownProblem(SolverError):
    pass
