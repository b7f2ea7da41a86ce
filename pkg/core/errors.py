#!/usr/bin/env python3
"""
Exception hierarchy for FedAlign.

Every error raised on purpose by the core modules derives from FedAlignError so
the CLI can map failures to exit codes without catching unrelated bugs.
"""

from typing import List, Optional, Tuple


class FedAlignError(Exception):
    """Base class for all FedAlign errors."""


class ShapeMismatchError(FedAlignError, ValueError):
    """Raised when two operands have incompatible shapes."""

    def __init__(self, operation: str, left_shape: Tuple[int, ...],
                 right_shape: Optional[Tuple[int, ...]] = None, detail: str = ""):
        self.operation = operation
        self.left_shape = tuple(left_shape)
        self.right_shape = tuple(right_shape) if right_shape is not None else None
        message = f"{operation}: incompatible shapes {self.left_shape}"
        if self.right_shape is not None:
            message += f" and {self.right_shape}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NonFiniteError(FedAlignError, ArithmeticError):
    """Raised when a public numeric operation produces NaN or Inf."""

    def __init__(self, operation: str, count: int):
        self.operation = operation
        self.count = count
        super().__init__(f"{operation}: result contains {count} non-finite entries")


class FeedbackError(FedAlignError, ValueError):
    """Invalid feedback layer set, feedback shape, or rescale request."""


class PartitionError(FedAlignError, ValueError):
    """Invalid dataset or partition specification."""


class TraceError(FedAlignError, ValueError):
    """Recorded traces cannot be compared (length or shape mismatch)."""


class ConfigError(FedAlignError, ValueError):
    """Configuration failed validation; carries one message per offending field."""

    def __init__(self, errors: List[str], source: str = ""):
        self.errors = list(errors)
        self.source = source
        header = "Configuration validation failed"
        if source:
            header += f" for {source}"
        super().__init__(header + ":\n" + "\n".join(f"  - {e}" for e in self.errors))


class CheckFailedError(FedAlignError):
    """An enabled numerical check (gradcheck, boundcheck) did not pass."""
