# Core/errors.py

"""
Exception hierarchy. main.py maps ConfigError to exit code 2 and every other
TableQAError to exit code 3.
"""

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_FAILURE = 3


class TableQAError(Exception):
    """Base class for all errors raised by this package."""
    exit_code = EXIT_RUNTIME_FAILURE


class ConfigError(TableQAError):
    """Invalid or infeasible configuration."""
    exit_code = EXIT_CONFIG_ERROR


class TableStructureError(TableQAError, ValueError):
    """A table or linearized table violates its structural invariants."""


class VocabularyMismatchError(TableQAError):
    """Checkpoint vocabulary does not match the vocabulary in use."""


class NonFiniteLossError(TableQAError):
    """A loss component became NaN or infinite."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or {}


class TrainingDivergedError(TableQAError):
    """Loss stayed far above its initial value for too long."""

    def __init__(self, message, loss_curve=None):
        super().__init__(message)
        self.loss_curve = loss_curve or []


class PerturbationError(TableQAError):
    """A perturbation cannot be applied (e.g. no compatible donor)."""


class DiagnosticsError(TableQAError):
    """Diagnostics input is empty or malformed."""


class QueryResolutionError(TableQAError, ValueError):
    """A structured task query does not resolve to a unique answer on a table."""
