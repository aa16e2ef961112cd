"""Exception types shared across the package."""

from __future__ import annotations


class UniskelError(Exception):
    """Base class for all package errors."""


class MalformedSequence(UniskelError, ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class UnboundVariable(UniskelError, KeyError):
    def __init__(self, index: int):
        super().__init__(f"variable x{index} has no binding")
        self.index = index


class ArityMismatch(UniskelError, ValueError):
    pass


class RetryExhausted(UniskelError, RuntimeError):
    pass


class RepairFailed(UniskelError, RuntimeError):
    pass


class NonFiniteData(UniskelError, ValueError):
    pass


class ShapeMismatch(UniskelError, ValueError):
    pass


class EmptySet(UniskelError, ValueError):
    pass


class NonFiniteLoss(UniskelError, FloatingPointError):
    pass


class VersionError(UniskelError, ValueError):
    pass


class CorruptCheckpoint(UniskelError, ValueError):
    pass


class MissingArtifact(UniskelError, FileNotFoundError):
    pass
