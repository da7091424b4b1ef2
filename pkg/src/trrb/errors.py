"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class InvalidResolutionError(InvalidArgumentError):
    """Benchmark geometry does not align with the requested grid."""


class OutOfBoundsError(ValueError):
    pass


class FactorizationError(RuntimeError):
    """Matrix is singular or not positive definite."""


class EstimateInvalidError(RuntimeError):
    """A constant bound cannot be certified (e.g. nonpositive theta)."""


class NumericalBreakdownError(RuntimeError):
    """A residual quadratic form came out significantly negative."""


class DegenerateBasisError(RuntimeError):
    """A reduced system is singular."""


class ModelInvalidError(RuntimeError):
    """Reduced objective is nonpositive, so relative estimates are undefined."""


class AGCFailure(RuntimeError):
    """Backtracking along the steepest-descent arc was exhausted."""


class ReferenceMissingError(FileNotFoundError):
    pass
