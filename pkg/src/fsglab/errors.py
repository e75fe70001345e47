"""Shared exception types.

All subclass ValueError (or IndexError where noted) so callers that only
know stdlib types still behave sensibly.
"""


class DimensionError(ValueError):
    """Shapes or element counts do not line up; message names both sides."""


class DomainError(ValueError):
    """Input is outside the mathematical domain of the operation."""


class EvaluationError(ValueError):
    """A numeric evaluation produced a non-finite value."""


class EmptyHistoryError(ValueError):
    """A gradient-history window was requested from an empty buffer."""


class ContractError(ValueError):
    """A documented usage contract was violated (not a shape problem)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss.  Carries the iteration index."""

    def __init__(self, iteration, message=""):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")


class ConfigError(ValueError):
    """Config file could not be parsed or validated; names line/field."""


class FormatError(ValueError):
    """A binary file did not match its documented format."""


class FitError(ValueError):
    """A curve fit was requested on invalid data; carries the bad index."""

    def __init__(self, index, message=""):
        self.index = index
        super().__init__(message or f"invalid value at index {index}")
