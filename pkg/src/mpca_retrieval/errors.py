"""Exception hierarchy shared by every stage (tensor ops, fitting, hashing, files, CLI)."""
from __future__ import annotations


class MpcaRetrievalError(Exception):
    """Root of all errors raised on purpose by this package."""


class ShapeError(MpcaRetrievalError, ValueError):
    pass


class ArgumentError(MpcaRetrievalError, ValueError):
    pass


class NumericError(MpcaRetrievalError, ArithmeticError):
    pass


class CapacityError(MpcaRetrievalError):
    pass


class FormatError(MpcaRetrievalError):
    """Malformed binary file; `offset` is the first invalid byte."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = int(offset)


class PipelineError(MpcaRetrievalError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class NoRelevantItemsWarning(UserWarning):
    """A query had no relevant item in the ranking; its AP counts as 0."""
