# logging_config.py
"""
Centralized logging configuration for the solver.
Every module logs through get_logger(__name__); structured context is passed
with extra={...} so handlers can pick it up.
"""

import logging
import sys
import time
from functools import wraps
from typing import Any, Callable

from settings import HINTS_LOG_LEVEL

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVEL = getattr(logging, HINTS_LOG_LEVEL, logging.INFO)

logging.basicConfig(
    level=LOG_LEVEL,
    format=LOG_FORMAT,
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

# numba's compiler is chatty at DEBUG
logging.getLogger('numba').setLevel(logging.WARNING)


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger instance for a module.

    Args:
        name: Usually __name__ of the calling module

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(LOG_LEVEL)
    return logger


def log_operation(operation_name: str):
    """
    Decorator to log a long-running operation with timing and error handling.

    Usage:
        @log_operation("assemble_2d")
        def assemble_2d(mask, k, f):
            ...
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            logger = get_logger(func.__module__)
            logger.debug(f"Starting {operation_name}", extra={"operation": operation_name})
            start = time.perf_counter()

            try:
                result = func(*args, **kwargs)
            except Exception as e:
                logger.error(
                    f"Failed {operation_name}",
                    extra={"operation": operation_name, "error": str(e)},
                    exc_info=True
                )
                raise

            elapsed = time.perf_counter() - start
            logger.debug(
                f"Completed {operation_name} in {elapsed:.3f}s",
                extra={"operation": operation_name, "seconds": elapsed}
            )
            return result

        return wrapper
    return decorator
