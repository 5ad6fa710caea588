"""
Standardized Error Handling Module for gossipage

This module provides the exception hierarchy shared by the solvers and the
mapping from exceptions to command-line exit codes.

Usage:
    from gossipage.shared.error_handler import ErrorHandler, ValidationError

    error_handler = ErrorHandler(command='bound')

    # Use as decorator on a click command body
    @error_handler.cli_command
    def bound(...):
        ...

    # Or handle manually
    try:
        ...
    except Exception as e:
        exit_code = error_handler.handle_error(e)
"""

import functools
import numbers
import sys
from datetime import datetime, timezone
from enum import Enum, IntEnum
from typing import Any, Callable, Dict, Iterable, Optional

import click

from .logging_utils import get_logger


class ErrorSeverity(Enum):
    """Error severity levels."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Error categories for classification."""
    VALIDATION = "validation"
    TOPOLOGY = "topology"
    ENUMERATION = "enumeration"
    NUMERICAL = "numerical"
    SIMULATION = "simulation"
    SOUNDNESS = "soundness"
    CONFIGURATION = "configuration"
    SYSTEM = "system"


class ExitCode(IntEnum):
    """Process exit codes of the gossipage command."""
    OK = 0
    USAGE = 1
    VALIDATION = 2
    SOUNDNESS = 3


class GossipAgeError(Exception):
    """Base exception class for gossipage errors."""

    exit_code = ExitCode.VALIDATION

    def __init__(self, message: str, error_code: Optional[str] = None,
                 category: ErrorCategory = ErrorCategory.SYSTEM,
                 severity: ErrorSeverity = ErrorSeverity.MEDIUM,
                 details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.category = category
        self.severity = severity
        self.details = details or {}
        self.timestamp = datetime.now(timezone.utc).isoformat()
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'error_code': self.error_code,
            'message': self.message,
            'category': self.category.value,
            'severity': self.severity.value,
            'details': self.details,
            'timestamp': self.timestamp,
        }


class ValidationError(GossipAgeError, ValueError):
    """Bad parameters or malformed inputs."""
    def __init__(self, message: str, **kwargs):
        kwargs.setdefault('category', ErrorCategory.VALIDATION)
        kwargs.setdefault('severity', ErrorSeverity.LOW)
        super().__init__(message, **kwargs)


class TopologyError(ValidationError):
    """Ill-posed topology parameters."""
    def __init__(self, message: str, family: Optional[str] = None, **kwargs):
        details = kwargs.pop('details', {})
        if family:
            details['family'] = family
        super().__init__(message, category=ErrorCategory.TOPOLOGY, details=details, **kwargs)


class CapacityError(GossipAgeError):
    """An enumeration, memo or node-count cap was exceeded."""
    def __init__(self, message: str, reached: Optional[int] = None, cap: Optional[int] = None, **kwargs):
        details = kwargs.pop('details', {})
        if reached is not None:
            details['reached'] = reached
        if cap is not None:
            details['cap'] = cap
        self.reached = reached
        self.cap = cap
        super().__init__(
            message,
            category=ErrorCategory.ENUMERATION,
            severity=ErrorSeverity.MEDIUM,
            details=details,
            **kwargs
        )


class DisconnectedSetError(ValidationError):
    """A node set required to be connected is not."""


class NumericalError(GossipAgeError):
    """Zero denominators, quadrature non-convergence and similar failures."""
    def __init__(self, message: str, **kwargs):
        super().__init__(
            message,
            category=ErrorCategory.NUMERICAL,
            severity=ErrorSeverity.HIGH,
            **kwargs
        )


class SimulationError(GossipAgeError):
    """Invalid simulation configuration or a broken run invariant."""
    def __init__(self, message: str, **kwargs):
        kwargs.setdefault('severity', ErrorSeverity.MEDIUM)
        super().__init__(message, category=ErrorCategory.SIMULATION, **kwargs)


class SoundnessViolation(GossipAgeError):
    """A bound fell below an exact or simulated reference value."""

    exit_code = ExitCode.SOUNDNESS

    def __init__(self, message: str, violations: Optional[Iterable[str]] = None, **kwargs):
        details = kwargs.pop('details', {})
        self.violations = list(violations or [])
        details['violations'] = self.violations
        super().__init__(
            message,
            category=ErrorCategory.SOUNDNESS,
            severity=ErrorSeverity.HIGH,
            details=details,
            **kwargs
        )


class ErrorHandler:
    """Maps exceptions to exit codes and logs them with their details."""

    def __init__(self, command: str):
        self.command = command
        self.logger = get_logger(f"gossipage.cli.{command}")

    def exit_code_for(self, error: BaseException) -> ExitCode:
        if isinstance(error, click.UsageError):
            return ExitCode.USAGE
        if isinstance(error, GossipAgeError):
            return error.exit_code
        return ExitCode.USAGE

    def handle_error(self, error: BaseException) -> ExitCode:
        """Log an error and return the exit code it maps to."""
        code = self.exit_code_for(error)

        if isinstance(error, GossipAgeError):
            payload = error.to_dict()
            if error.severity in (ErrorSeverity.HIGH, ErrorSeverity.CRITICAL):
                self.logger.error(f"{self.command} failed: {error.message}", command=self.command, error=payload)
            else:
                self.logger.warning(f"{self.command} failed: {error.message}", command=self.command, error=payload)
            click.echo(f"Error: {error.message}", err=True)
        else:
            self.logger.exception(f"{self.command} failed unexpectedly", command=self.command,
                                  error_type=type(error).__name__)
            click.echo(f"Error: {error}", err=True)

        return code

    def cli_command(self, func: Callable) -> Callable:
        """Decorator running a command body and exiting with the mapped code."""
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                result = func(*args, **kwargs)
            except (click.exceptions.Exit, click.exceptions.Abort):
                raise
            except click.UsageError:
                raise
            except Exception as e:
                sys.exit(int(self.handle_error(e)))
            return result
        return wrapper


# Convenience functions for common validation
def validate_required_fields(data: Dict[str, Any], required_fields: Iterable[str]) -> None:
    """Validate that required fields are present in data."""
    missing_fields = [f for f in required_fields if data.get(f) is None]

    if missing_fields:
        raise ValidationError(
            f"Missing required fields: {', '.join(missing_fields)}",
            details={'missing_fields': missing_fields}
        )


def validate_positive(name: str, value: float, allow_zero: bool = False) -> float:
    """Validate a finite positive (or nonnegative) number."""
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}", details={name: value})
    if number != number or number in (float('inf'), float('-inf')):
        raise ValidationError(f"{name} must be finite, got {value!r}", details={name: value})
    if number < 0 or (number == 0 and not allow_zero):
        bound = "nonnegative" if allow_zero else "positive"
        raise ValidationError(f"{name} must be {bound}, got {value!r}", details={name: value})
    return number


def validate_int_range(name: str, value: Any, low: Optional[int] = None, high: Optional[int] = None) -> int:
    """Validate an integer within [low, high]."""
    if isinstance(value, bool) or not (
            isinstance(value, numbers.Integral)
            or (isinstance(value, float) and value.is_integer())):
        raise ValidationError(f"{name} must be an integer, got {value!r}", details={name: value})
    number = int(value)
    if low is not None and number < low:
        raise ValidationError(f"{name} must be >= {low}, got {number}", details={name: number, 'low': low})
    if high is not None and number > high:
        raise ValidationError(f"{name} must be <= {high}, got {number}", details={name: number, 'high': high})
    return number
