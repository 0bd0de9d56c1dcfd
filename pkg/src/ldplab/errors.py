"""Exception hierarchy.

Three families map onto the CLI exit codes: invalid input (1), a failed
computation (2) and an underpowered run whose answer is inconclusive (3).
"""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class ComputationError(RuntimeError):
    """A computation could not produce a trustworthy result."""


class InconclusiveError(RuntimeError):
    """The budget was too small to decide; not evidence of a wrong answer."""


class DomainEscapeError(ComputationError):
    pass


class DegenerateOrbitError(ComputationError):
    pass


class OutOfScheduleError(ComputationError):
    pass


class InsufficientSamplesError(ComputationError):
    pass


class UnresolvedMassError(ComputationError):
    pass


class InsufficientDepthError(ComputationError):
    pass


class NotFoundError(ComputationError):
    pass


class BudgetExceededError(ComputationError):
    pass


class NonConvexError(ComputationError):
    pass


class CensoredError(InconclusiveError):
    pass


class CoverageError(InconclusiveError):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)
