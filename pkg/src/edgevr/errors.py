"""Exception hierarchy shared across the simulator and trainer."""

from __future__ import annotations


class EdgeVRError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EdgeVRError, ValueError):
    """A generator spec or domain object violates its invariants."""


class InvalidRequestError(EdgeVRError, IndexError):
    """A GoP or level index lies outside the ladder."""


class DomainError(EdgeVRError, ValueError):
    """A function was evaluated outside its mathematical domain."""


class StarvationError(EdgeVRError):
    """A non-looping trace cannot deliver the remaining payload."""


class ParseError(EdgeVRError, ValueError):
    """A data file is malformed."""

    def __init__(self, path, lineno: int | None, message: str):
        self.path = str(path)
        self.lineno = lineno
        where = f"{self.path}:{lineno}" if lineno is not None else self.path
        super().__init__(f"{where}: {message}")


class ConfigurationError(EdgeVRError):
    """Inconsistent runtime configuration, e.g. an ECU placement with no ECU share."""


class ProtocolError(EdgeVRError):
    """Environment or policy used out of order or with malformed actions."""


class TrainingDivergence(EdgeVRError, FloatingPointError):
    """A training loss became non-finite."""
