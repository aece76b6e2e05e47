"""
Exception types shared across FrugalHop.

Validation failures subclass ValueError so callers can treat them like any
other bad-argument error; transport and training failures subclass
RuntimeError.
"""

from typing import Optional


class FrugalHopError(Exception):
    """Base class for all FrugalHop errors."""


class ConfigError(FrugalHopError, ValueError):
    """A configuration value or file is invalid."""


class DatasetError(FrugalHopError, ValueError):
    """A dataset or corpus file is malformed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class TransportError(FrugalHopError, RuntimeError):
    """A remote service could not be reached or answered badly."""

    def __init__(self, message: str, status_code: Optional[int] = None):
        self.status_code = status_code
        super().__init__(message)


class RetrievalError(TransportError):
    """The retriever failed to return documents."""


class PolicyError(TransportError):
    """The policy or generator backend failed to return text."""


class TrainingDivergence(FrugalHopError, RuntimeError):
    """Stopping-policy weights became non-finite."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"stopping policy weights diverged at step {step}")
