# exception_handlers.py
"""
Maps solver exceptions to process exit codes for the command-line runner.
Each exception family is logged once at the appropriate level and turned into
a stable exit code.
"""

from typing import Callable

from exceptions import (
    HintsSolverException,
    InvalidInputException,
    ShapeMismatchException,
    EmptyDomainException,
    AssemblyException,
    ZeroDiagonalException,
    SingularMatrixException,
    CholeskyFailureException,
    TrainingDivergedException,
    GenerationFailedException,
    SerializationException,
    ConfigParseException
)
from logging_config import get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_INVALID_INPUT = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5
EXIT_DIVERGED = 6

# Checked in order; first match wins
_EXIT_CODES = [
    (ConfigParseException, EXIT_CONFIG, "Config error"),
    (InvalidInputException, EXIT_INVALID_INPUT, "Invalid input"),
    (ShapeMismatchException, EXIT_INVALID_INPUT, "Invalid input"),
    (EmptyDomainException, EXIT_INVALID_INPUT, "Invalid input"),
    (AssemblyException, EXIT_NUMERICAL, "Numerical failure"),
    (ZeroDiagonalException, EXIT_NUMERICAL, "Numerical failure"),
    (SingularMatrixException, EXIT_NUMERICAL, "Numerical failure"),
    (CholeskyFailureException, EXIT_NUMERICAL, "Numerical failure"),
    (TrainingDivergedException, EXIT_NUMERICAL, "Numerical failure"),
    (GenerationFailedException, EXIT_NUMERICAL, "Numerical failure"),
    (SerializationException, EXIT_IO, "Artifact error"),
]


def exit_code_for(exc: BaseException) -> int:
    """
    Translate an exception into an exit code and log it.

    Args:
        exc: The exception that escaped a command

    Returns:
        Process exit code
    """
    for exc_type, code, label in _EXIT_CODES:
        if isinstance(exc, exc_type):
            logger.error(f"{label}: {exc.message}", extra=exc.details)
            return code

    if isinstance(exc, HintsSolverException):
        logger.error(f"Solver error: {exc.message}", extra=exc.details)
        return EXIT_UNEXPECTED

    if isinstance(exc, OSError):
        logger.error(f"I/O error: {exc}")
        return EXIT_IO

    logger.error(f"Unexpected error: {exc}", exc_info=exc)
    return EXIT_UNEXPECTED


def run_with_handlers(command: Callable[[], int]) -> int:
    """
    Run a CLI command, converting escaped exceptions into exit codes.

    Args:
        command: Zero-argument callable returning an exit code
    """
    try:
        return command()
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return 130
    except Exception as exc:
        return exit_code_for(exc)
