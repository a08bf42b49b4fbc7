"""Exception hierarchy shared by the library and the command line."""


class EivError(Exception):
    """Base class for all package errors."""


class DimensionError(EivError, ValueError):
    """Array shapes do not agree."""


class InfeasibleError(EivError):
    """An optimization problem has an empty feasible set.

    ``suggested_tau`` carries the smallest tau for which ``theta = 0`` is
    feasible, when that is meaningful for the estimator at hand.
    """

    def __init__(self, message, suggested_tau=None, result=None):
        super().__init__(message)
        self.suggested_tau = suggested_tau
        self.result = result


class UnboundedError(EivError):
    """The objective is unbounded below on the feasible set."""


class SolverError(EivError):
    """The solver stopped without a certified answer."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NoFixedPointError(EivError):
    """The equation ``r = phi(r)`` has no solution in the searched range."""


class EnumerationBudgetError(EivError):
    """An exact enumeration would exceed its configured size limits."""


class ConfigError(EivError, ValueError):
    """A configuration or input file could not be parsed."""
