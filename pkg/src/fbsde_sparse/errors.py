"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A parameter is outside the admissible range of an operation."""


class NumericError(RuntimeError):
    """An internal numerical computation produced non-finite or unusable results.

    Carries optional context (e.g. the offending quadrature node) in ``detail``.
    """

    def __init__(self, message: str, detail=None):
        super().__init__(message)
        self.detail = detail


class SolverDivergenceError(RuntimeError):
    """The point-wise fixed-point iteration failed to reach its tolerance."""

    def __init__(self, message: str, time_index=None, point=None, residual=None):
        super().__init__(message)
        self.time_index = time_index
        self.point = point
        self.residual = residual


class UnsupportedOperationError(RuntimeError):
    """The operation needs data (e.g. an exact solution) the input does not carry."""
