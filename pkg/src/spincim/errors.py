"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class BatchStatisticsError(DomainError):
    """Batch statistics requested on a batch that is too small."""


class ParseError(ValueError):
    """Malformed binary input. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
