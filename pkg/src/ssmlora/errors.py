"""Exception types shared across the package."""

from __future__ import annotations


class SSMLoRAError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SSMLoRAError, ValueError):
    """Operand shapes do not agree."""


class ConfigError(SSMLoRAError, ValueError):
    """An invalid or inconsistent configuration value."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class PlanError(SSMLoRAError, ValueError):
    """An insertion plan cannot be applied to a model."""


class InputError(SSMLoRAError, ValueError):
    """Bad data handed to a model or evaluation routine."""


class SequencingError(SSMLoRAError, RuntimeError):
    """A chain was stepped out of position order."""

    def __init__(self, kind: str, expected: int, actual: int):
        super().__init__(
            f"chain {kind!r}: expected step at position {expected}, got {actual}"
        )
        self.kind = kind
        self.expected = expected
        self.actual = actual


class NumericError(SSMLoRAError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class TrainingError(NumericError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class ContractError(SSMLoRAError, ValueError):
    """A call violated an operation's precondition."""
