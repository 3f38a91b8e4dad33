"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgumentError(ValueError):
    """An argument is outside the domain of the operation."""


class DegenerateEmbeddingError(InvalidArgumentError):
    """The source graph is too small to be embedded into a triad."""


class CostLimitError(InvalidArgumentError):
    """An exhaustive computation was refused because it would be too expensive."""

    def __init__(self, message: str, evaluations: int):
        super().__init__(message)
        self.evaluations = evaluations


class ValidationError(ValueError):
    """A file, plan or graph failed structural validation."""


class DivergenceError(RuntimeError):
    """An integration produced a non-finite state."""

    def __init__(self, message: str, time: float, members=None):
        super().__init__(message)
        self.time = time
        self.members = members


class NonConvergenceError(RuntimeError):
    """A local minimization hit its iteration cap; ``best`` holds the best point found."""

    def __init__(self, message: str, best):
        super().__init__(message)
        self.best = best


class UndefinedRatioError(ArithmeticError):
    """A normalized energy difference was requested against a zero reference."""
