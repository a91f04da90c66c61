"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class DiffwaveError(Exception):
    """Base class for every error raised by this package."""


class DomainError(DiffwaveError, ValueError):
    """Arguments outside the supported domain."""


class ConvergenceError(DiffwaveError, ArithmeticError):
    """No evaluation branch reached the requested tolerance.

    The best available estimate and its error bound are attached so callers
    can decide whether to accept a degraded answer.
    """

    def __init__(self, message: str, *, estimate: float, error_bound: float) -> None:
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound


class PrecisionError(DiffwaveError, ArithmeticError):
    """Cancellation consumed the extended working precision."""


class SingularModeError(DiffwaveError, ArithmeticError):
    """The 2x2 per-mode system is numerically singular."""

    def __init__(self, message: str, *, mode: int) -> None:
        super().__init__(message)
        self.mode = mode


class ContractionError(DiffwaveError):
    """The alternating iteration is not a contraction for some modes."""

    def __init__(self, message: str, *, modes: list[int]) -> None:
        super().__init__(message)
        self.modes = modes


class NonFiniteError(DiffwaveError, ArithmeticError):
    """An iterate produced NaN or infinity."""
