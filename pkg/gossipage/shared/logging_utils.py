"""
Structured Logging Utilities for gossipage

Every record is rendered as one JSON object on stderr, carrying the
correlation context bound by LogContext (experiment name, sweep point,
replication index) and any keyword fields passed to the log call.

Usage:
    from gossipage.shared.logging_utils import get_logger, LogContext, log_performance

    logger = get_logger(__name__)

    with LogContext(experiment='grid_square', point=3):
        logger.info('chain evaluated', family='ring', n=10000)

    @log_performance('bounds.ring_chain')
    def ring_bound_chain(...):
        ...
"""

import json
import logging
import sys
import time
import functools
import traceback
import threading
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Optional

# Thread-local storage for correlation context
_context = threading.local()

_ROOT_NAME = 'gossipage'


class StructuredFormatter(logging.Formatter):
    """JSON formatter for structured logging."""

    def __init__(self, service_name: Optional[str] = None, environment: Optional[str] = None):
        super().__init__()
        self.service_name = service_name or 'gossipage'
        self.environment = environment or 'unknown'

    def format(self, record: logging.LogRecord) -> str:
        log_entry: Dict[str, Any] = {
            'timestamp': datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'service': self.service_name,
            'environment': self.environment,
        }

        context = get_correlation_context()
        if context:
            log_entry['context'] = dict(context)

        extra_fields = dict(getattr(record, 'extra_fields', None) or {})
        if 'duration_ms' in extra_fields:
            log_entry['performance'] = {
                'duration_ms': extra_fields.pop('duration_ms'),
                'operation': extra_fields.pop('operation', 'unknown'),
            }
        log_entry.update(extra_fields)

        if record.exc_info:
            log_entry['exception'] = {
                'type': record.exc_info[0].__name__ if record.exc_info[0] else None,
                'message': str(record.exc_info[1]) if record.exc_info[1] else None,
                'stack_trace': traceback.format_exception(*record.exc_info),
            }

        if record.levelno <= logging.DEBUG:
            log_entry['location'] = {
                'file': record.filename,
                'line': record.lineno,
                'function': record.funcName,
            }

        return json.dumps(log_entry, default=str, separators=(',', ':'))


class StructuredLogger:
    """Logger wrapper that accepts structured keyword fields."""

    def __init__(self, logger: logging.Logger):
        self.logger = logger

    def _log_with_extra(self, level: int, message: str, exc_info: bool = False, **fields):
        if not self.logger.isEnabledFor(level):
            return
        record = self.logger.makeRecord(
            name=self.logger.name,
            level=level,
            fn='',
            lno=0,
            msg=message,
            args=(),
            exc_info=sys.exc_info() if exc_info else None,
        )
        record.extra_fields = fields
        self.logger.handle(record)

    def is_debug_enabled(self) -> bool:
        return self.logger.isEnabledFor(logging.DEBUG)

    def debug(self, message: str, **kwargs):
        self._log_with_extra(logging.DEBUG, message, **kwargs)

    def info(self, message: str, **kwargs):
        self._log_with_extra(logging.INFO, message, **kwargs)

    def warning(self, message: str, **kwargs):
        self._log_with_extra(logging.WARNING, message, **kwargs)

    def error(self, message: str, **kwargs):
        self._log_with_extra(logging.ERROR, message, **kwargs)

    def exception(self, message: str, **kwargs):
        """Log at error level with the active traceback attached."""
        self._log_with_extra(logging.ERROR, message, exc_info=True, **kwargs)

    def log_performance_metric(self, operation: str, duration_ms: float, **kwargs):
        self.info(f"Performance: {operation}",
                  operation=operation,
                  duration_ms=duration_ms,
                  metric_type='performance',
                  **kwargs)


def get_logger(name: str) -> StructuredLogger:
    """Get a structured logger below the package logger.

    Handlers live on the package logger (see configure_logging), so module
    loggers only need to propagate.
    """
    if not name.startswith(_ROOT_NAME):
        name = f"{_ROOT_NAME}.{name}"
    return StructuredLogger(logging.getLogger(name))


def configure_logging(level: Optional[str] = None, quiet: bool = False,
                      environment: Optional[str] = None,
                      service_name: Optional[str] = None) -> StructuredLogger:
    """Install the JSON handler on the package logger.

    Called once by the CLI. Level defaults to the configured logging level;
    quiet raises it to ERROR.
    """
    from .config import get_config

    config = get_config()
    root = logging.getLogger(_ROOT_NAME)
    for handler in root.handlers[:]:
        root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(StructuredFormatter(
        service_name or config.logging.service_name,
        environment or config.environment,
    ))
    root.addHandler(handler)

    resolved = 'ERROR' if quiet else (level or config.logging.level)
    root.setLevel(getattr(logging, str(resolved).upper(), logging.WARNING))
    root.propagate = False

    return StructuredLogger(root)


def set_correlation_context(**context):
    """Set correlation context for current thread."""
    if not hasattr(_context, 'correlation'):
        _context.correlation = {}
    _context.correlation.update(context)


def get_correlation_context() -> Dict[str, Any]:
    """Get correlation context for current thread."""
    return getattr(_context, 'correlation', {})


def clear_correlation_context():
    """Clear correlation context for current thread."""
    if hasattr(_context, 'correlation'):
        _context.correlation.clear()


@contextmanager
def LogContext(**context):
    """Context manager for correlation context."""
    previous_context = get_correlation_context().copy()

    try:
        set_correlation_context(**context)
        yield
    finally:
        clear_correlation_context()
        if previous_context:
            set_correlation_context(**previous_context)


def log_performance(operation_name: Optional[str] = None):
    """Decorator to log function performance."""
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            op_name = operation_name or f"{func.__module__}.{func.__name__}"
            logger = get_logger(func.__module__)

            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                duration_ms = (time.perf_counter() - start_time) * 1000
                logger.log_performance_metric(op_name, duration_ms, success=False, error=str(e))
                raise
            duration_ms = (time.perf_counter() - start_time) * 1000
            logger.log_performance_metric(op_name, duration_ms, success=True)
            return result
        return wrapper
    return decorator
