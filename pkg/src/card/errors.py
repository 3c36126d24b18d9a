"""Exception types shared across the package."""

from __future__ import annotations


class CardError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CardError, ValueError):
    pass


class UnknownAgent(ValidationError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class ShapeMismatch(ValidationError):
    pass


class InvalidThreshold(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class CycleDetected(CardError):
    def __init__(self, message: str, cycle: list[int] | None = None):
        super().__init__(message)
        self.cycle = cycle or []


class ExternalEmbedderUnavailable(CardError):
    pass


class ExecutorFailure(CardError):
    """An agent executor raised; carries the transcript produced so far."""

    def __init__(self, agent: int, round: int, partial, cause: BaseException | None = None):
        super().__init__(f"executor failed for agent {agent} at round {round}: {cause!r}")
        self.agent = agent
        self.round = round
        self.partial = partial
        self.cause = cause


class EmptyResponses(ValidationError):
    pass


class MissingPriceFeature(ValidationError):
    pass


class NonFiniteGradient(CardError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateVariance(ValidationError):
    pass


class ManifestError(CardError):
    """Parse failure with a source position."""

    def __init__(self, message: str, line: int, column: int, path: str | None = None):
        where = f"{path}:" if path else ""
        super().__init__(f"{where}{line}:{column}: {message}")
        self.line = line
        self.column = column
        self.path = path
