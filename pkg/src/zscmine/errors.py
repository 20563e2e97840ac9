"""Exception hierarchy shared across the package."""


class ZSCError(Exception):
    """Base class for all errors raised by zscmine."""


class DimensionError(ZSCError, ValueError):
    """Array shapes disagree with each other or with a model."""

    def __init__(self, what, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class DataError(ZSCError, ValueError):
    """Malformed, inconsistent or missing dataset content."""


class EmptyPairSetError(ZSCError, ValueError):
    """A loss was requested over an empty positive or negative pair set."""


class DivergenceError(ZSCError, FloatingPointError):
    """Training produced a non-finite or exploding objective.

    ``snapshot`` holds the last parameters and the epoch at which the guard
    tripped so callers can dump diagnostics.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
