from typing import Any, Dict, Optional


class PSLossError(Exception):
    """Base error for every failure raised by the toolkit."""

    exit_code: int = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ShapeError(PSLossError):
    """Operand shapes are incompatible."""


class DomainError(PSLossError):
    """Input values outside the domain of an operation (log of 0, NaN, ...)."""


class TapeError(PSLossError):
    """Gradient tape misuse: detached loss, foreign nodes, mixed tapes."""


class ConfigError(PSLossError):
    exit_code = 2


class IngestError(PSLossError):
    exit_code = 3


class CheckpointError(PSLossError):
    exit_code = 4


class TrainingError(PSLossError):
    exit_code = 5
