"""Exception types shared across the toolkit.

Every error raised on a documented failure path derives from ThermoplaceError,
so the CLI can map failures to stable exit codes.
"""


class ThermoplaceError(Exception):
    """Base class for all toolkit errors."""


class DomainError(ThermoplaceError, ValueError):
    """An argument lies outside its mathematical or physical domain."""


class RangeError(ThermoplaceError, ValueError):
    """A query falls outside the covered time or space range (no extrapolation)."""


class ConfigError(ThermoplaceError, ValueError):
    """A configuration document is malformed, has unknown keys, or out-of-range values."""


class DegenerateScalerError(ThermoplaceError, ValueError):
    """An input slot is constant (max = min) or the output spread is zero."""


class DegenerateReferenceError(ThermoplaceError, ValueError):
    """The reference of a relative error has zero norm."""


class TrainingNumericError(ThermoplaceError, ArithmeticError):
    """A loss or gradient became non-finite.

    ``index`` is the offending batch index when known; ``params`` carries the
    last finite parameter vector when the failure happened mid-training.
    """

    def __init__(self, message, index=None, params=None):
        super().__init__(message)
        self.index = index
        self.params = params


class InfeasibleError(ThermoplaceError, ValueError):
    """No sensor selection satisfies the count and distance constraints.

    ``independence_bound`` is the size of the largest conflict-free candidate
    subset, which is what caps the feasible sensor count.
    """

    def __init__(self, message, n_min=None, independence_bound=None):
        super().__init__(message)
        self.n_min = n_min
        self.independence_bound = independence_bound


class SizeGuardError(ThermoplaceError, ValueError):
    """An exhaustive enumeration was requested beyond its size guard."""
