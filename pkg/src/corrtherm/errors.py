"""Exception hierarchy shared by every module."""


class CorrthermError(Exception):
    """Base class for all library errors."""


class ConfigError(CorrthermError, ValueError):
    """Invalid map, correspondence, kernel or run configuration."""


class PreconditionError(CorrthermError):
    """An operation was called outside the setting it is valid for."""


class ResourceError(CorrthermError):
    """A requested computation exceeds the configured enumeration budget."""


class NumericError(CorrthermError, ArithmeticError):
    """A numerical routine failed (root finding, verification, ...)."""


class ConvergenceError(NumericError):
    """Power iteration did not reach tolerance.

    The last observed residual is kept on the exception.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class ExpansionVerificationError(NumericError):
    """A sampled pair violates the distance-expanding inequality."""

    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness
