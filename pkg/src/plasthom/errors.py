"""Exception hierarchy.

Numerical failures (``NumericalError`` subclasses) map to CLI exit code 2,
everything else deriving from ``InputError`` maps to exit code 1.
"""


class PlasthomError(Exception):
    """Base class for all package errors."""


class InputError(PlasthomError, ValueError):
    """Malformed or out-of-contract input."""


class NumericalError(PlasthomError, ArithmeticError):
    """A solver or series failed to produce a trustworthy result."""


class SingularMatrix(InputError):
    pass


class NonPositiveDeterminant(InputError):
    pass


class NotTangent(InputError):
    pass


class OutsideK(InputError):
    pass


class EpsNonPositive(InputError):
    pass


class NotCompactlyContained(InputError):
    pass


class AssumptionViolated(InputError):
    """A growth/Lipschitz hypothesis failed on a concrete witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class LogDivergence(NumericalError):
    pass


class NoConvergence(NumericalError):
    """Iteration cap hit; ``best`` carries the best iterate when available."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class TableOutOfRange(NumericalError):
    pass
