"""Exception hierarchy.

Everything raised on purpose derives from :class:`DaeBranchError`.  The CLI
maps :class:`ConfigError` (and parse errors) to exit code 1 and every other
subclass to exit code 2, the "mathematical precondition failed" code.
"""
from __future__ import annotations


class DaeBranchError(Exception):
    """Base class for all library errors."""


class ConfigError(DaeBranchError):
    """Malformed problem configuration or inconsistent dimensions."""


class ParseError(ConfigError):
    """Syntax or name error in a DSL expression.

    ``offset`` is the byte offset into the source text.
    """

    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} (at offset {offset})")


class EvalDomainError(DaeBranchError):
    """Division by zero, square root of a negative number, missing history."""


class IndexAssumptionError(DaeBranchError):
    """The partial derivative of g in the algebraic variable is singular."""


class ManifoldDriftError(DaeBranchError):
    """A state left the constraint manifold by more than the allowed bound."""

    def __init__(self, message: str, time: float | None = None, drift: float | None = None):
        self.time = time
        self.drift = drift
        super().__init__(message)


class ConvergenceError(DaeBranchError):
    """An iterative solver did not converge.

    Carries the last iterate and the residual (or residual history).
    """

    def __init__(self, message: str, last_iterate=None, residual=None):
        self.last_iterate = last_iterate
        self.residual = residual
        super().__init__(message)


class DegreeError(DaeBranchError):
    """The degree is not admissible: degenerate or boundary zeros, bad sampling."""


class PreconditionError(DaeBranchError):
    """An operation was called outside its documented domain."""
