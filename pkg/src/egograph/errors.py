"""Exception types raised across the package.

Most subclass ValueError so callers that only care about "bad input" can
catch that, while tests and the CLI can be specific.
"""


class EgographError(Exception):
    """Base class for all package errors."""


class ParseError(EgographError, ValueError):
    pass


class LengthError(EgographError, ValueError):
    pass


class FormatError(EgographError, ValueError):
    pass


class ShapeError(EgographError, ValueError):
    pass


class DomainError(EgographError, ValueError):
    pass


class ParameterError(EgographError, ValueError):
    pass


class SizeError(EgographError, ValueError):
    pass


class EmptyOutputError(EgographError, ValueError):
    pass


class SamplingError(EgographError, ValueError):
    pass


class ConditioningError(EgographError, ArithmeticError):
    """The sampled weight block is too close to singular to invert."""


class ApproximationError(EgographError, ArithmeticError):
    """The Nystrom strength estimate went non-positive."""


class StageError(EgographError):
    """A pipeline stage failed; carries the stage name and offending path."""

    def __init__(self, stage, message, path=None):
        self.stage = stage
        self.path = path
        detail = f"[{stage}] {message}"
        if path is not None:
            detail += f" ({path})"
        super().__init__(detail)
