"""
Centralized error handling utilities for the phantom design toolkit.

This module provides the exception hierarchy shared by every module plus
helpers that keep error logging and parameter checks consistent.
"""

import math
import traceback
from enum import Enum
from typing import Optional

from utils.logging import get_logger


class ErrorSeverity(Enum):
    """Error severity levels."""
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"
    CRITICAL = "CRITICAL"


class PhantomError(Exception):
    """Base exception class for phantom toolkit errors."""

    def __init__(self, message: str, severity: ErrorSeverity = ErrorSeverity.MEDIUM,
                 details: Optional[dict] = None):
        super().__init__(message)
        self.severity = severity
        self.details = details or {}


class ConfigurationError(PhantomError):
    """Raised when configuration is invalid or missing."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, ErrorSeverity.CRITICAL, details)


class ValidationError(PhantomError):
    """Raised when a value breaks a domain invariant."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, ErrorSeverity.MEDIUM, details)


class SchemaError(PhantomError):
    """Raised when an input file does not follow its schema."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None,
                 details: Optional[dict] = None):
        details = dict(details or {})
        if line is not None:
            details['line'] = line
        if field is not None:
            details['field'] = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message, ErrorSeverity.MEDIUM, details)
        self.line = line
        self.field = field


class ModelEvaluationError(PhantomError):
    """Raised when a dispersion model produces a non-finite value."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, ErrorSeverity.HIGH, details)


class RangeError(PhantomError):
    """Raised when a request falls outside the tabulated or supported range."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, ErrorSeverity.MEDIUM, details)


class UsageError(PhantomError):
    """Raised when an operation is called with inconsistent arguments."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, ErrorSeverity.MEDIUM, details)


class UnitError(UsageError):
    """Raised when amounts in incompatible units would have to be combined."""


class FixtureLimitError(ValidationError):
    """Raised when a measured sample is thicker than the test fixture accepts."""


class UndefinedErrorFailure(PhantomError):
    """Raised when a relative error would divide by a zero tissue value."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message, ErrorSeverity.HIGH, details)


class CureScheduleError(UsageError):
    """Raised when a cure duration is shorter than the allowed floor."""


class ErrorContext:
    """Context manager for enhanced error handling."""

    def __init__(self, operation: str, logger_name: Optional[str] = None):
        self.operation = operation
        self.logger = get_logger(logger_name or __name__)

    def __enter__(self):
        self.logger.debug(f"Starting operation: {self.operation}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            self.logger.debug(f"Completed operation: {self.operation}")
            return False

        self.logger.error(f"Operation '{self.operation}' failed: {exc_val}")
        self.logger.debug(f"Traceback:\n{traceback.format_exc()}")

        # Don't suppress the exception
        return False


def validate_positive(value: float, param_name: str, allow_zero: bool = False) -> None:
    """
    Validate that a numeric parameter is finite and positive.

    Args:
        value: Value to validate
        param_name: Parameter name for error messages
        allow_zero: Whether zero is accepted

    Raises:
        ValidationError: If the value is not positive
    """
    if value is None or not math.isfinite(value) or (value < 0 if allow_zero else value <= 0):
        qualifier = "non-negative" if allow_zero else "positive"
        raise ValidationError(
            f"Parameter '{param_name}' must be {qualifier}, got {value}",
            details={'parameter': param_name, 'value': value}
        )
