"""
Error Types

Domain exceptions raised across the tracker library. Commands translate them
into process exit codes (see main.py).
"""


class MemeError(Exception):
    """Base class for every error raised by the library."""


class ConfigurationError(MemeError, ValueError):
    """A configuration value is invalid or inconsistent with another one."""


class ShapeError(MemeError, ValueError):
    """An array does not have the shape an operation requires."""


class RoutingError(MemeError, RuntimeError):
    """Router decision and expert outputs disagree."""


class InvariantViolation(MemeError, RuntimeError):
    """A contract that must hold at runtime was broken."""


class AcceptanceGateError(InvariantViolation):
    """A stage did not reach the quality floor required by the next stage."""


class NumericalFailure(MemeError, FloatingPointError):
    """A loss or activation became NaN or infinite."""

    def __init__(self, message: str, batch_seed: int = None):
        super().__init__(message)
        self.batch_seed = batch_seed


class EvaluationError(MemeError, ValueError):
    """A metric cannot be computed from the given tracking result."""
