"""Exception types shared across the package.

Exit-code mapping used by the CLI: usage errors -> 1, data errors -> 2,
numerical failures -> 3.
"""


class MotionSpaceError(Exception):
    """Base class for all package errors."""


class DataError(MotionSpaceError):
    """Bad input data: malformed files, out-of-range values, wrong sizes."""


class NumericalError(MotionSpaceError):
    """Numerical failure: degenerate inputs, non-finite gradients."""


class DegenerateInput(NumericalError):
    """A 6D rotation vector collapsed below the projectability threshold."""


class NonFiniteGradient(NumericalError):
    """An optimizer step saw NaN/inf gradients. Carries the parameter name."""


class InvalidConfig(DataError):
    """Out-of-range or inconsistent configuration values."""


class ShapeMismatch(DataError):
    """Array shape does not match the declared architecture or model."""


class OutOfBounds(DataError):
    """A value exceeds the normalization bounds it is being scaled by."""


class TooShort(DataError):
    """Sequence has too few frames for the requested operation."""


class EmptyInput(DataError):
    """An operation that requires non-empty input got an empty one."""


class EmptyObservation(DataError):
    """A completion observation carries neither points nor markers."""


class ParseError(DataError):
    """Malformed container file. Message carries file/line context."""

    def __init__(self, message, path=None, line=None):
        ctx = ""
        if path is not None:
            ctx += f"{path}"
        if line is not None:
            ctx += f":{line}"
        super().__init__(f"{ctx}: {message}" if ctx else message)
        self.path = path
        self.line = line


class StaleTape(MotionSpaceError):
    """Backward pass attempted with a tape recorded under older parameters."""


class RankDeficientWarning(UserWarning):
    """PCA kept a direction whose explained variance is numerically zero."""
