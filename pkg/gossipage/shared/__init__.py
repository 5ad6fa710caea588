"""
Shared utilities for gossipage.

Configuration, structured logging and the error hierarchy used by every
solver module and by the command line.
"""

from .error_handler import (
    ErrorHandler,
    ExitCode,
    GossipAgeError,
    ValidationError,
    TopologyError,
    CapacityError,
    DisconnectedSetError,
    NumericalError,
    SimulationError,
    SoundnessViolation,
    ErrorSeverity,
    ErrorCategory,
    validate_positive,
    validate_required_fields,
    validate_int_range,
)

from .config import (
    get_config,
    get_config_manager,
    set_config_manager,
    reset_config_cache,
    init_worker_config,
    ConfigManager,
    GossipAgeConfig,
)

from .logging_utils import (
    get_logger,
    configure_logging,
    LogContext,
    log_performance,
    StructuredLogger,
    StructuredFormatter,
)

__all__ = [
    'ErrorHandler',
    'ExitCode',
    'GossipAgeError',
    'ValidationError',
    'TopologyError',
    'CapacityError',
    'DisconnectedSetError',
    'NumericalError',
    'SimulationError',
    'SoundnessViolation',
    'ErrorSeverity',
    'ErrorCategory',
    'validate_positive',
    'validate_required_fields',
    'validate_int_range',
    'get_config',
    'get_config_manager',
    'set_config_manager',
    'reset_config_cache',
    'init_worker_config',
    'ConfigManager',
    'GossipAgeConfig',
    'get_logger',
    'configure_logging',
    'LogContext',
    'log_performance',
    'StructuredLogger',
    'StructuredFormatter',
]
