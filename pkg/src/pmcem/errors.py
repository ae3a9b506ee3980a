"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgumentError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """A chain or optimizer produced non-finite values.

    ``step`` is the index at which the non-finite state was detected and
    ``index`` optionally identifies the measurement / EM iteration.
    """

    def __init__(self, message: str, step: int | None = None, index: int | None = None):
        super().__init__(message)
        self.step = step
        self.index = index


class OperatorError(ArithmeticError):
    pass


class CheckpointFormatError(ValueError):
    pass


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
