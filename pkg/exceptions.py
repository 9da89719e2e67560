# exceptions.py
"""
Custom exception hierarchy for the solver.
Every failure that is not a numerical outcome of an iteration is raised as a
subclass of HintsSolverException; divergence of an iterative method is
reported in its ResidualHistory instead.
"""


class HintsSolverException(Exception):
    """Base exception for all solver errors."""
    def __init__(self, message: str, details: dict = None, original_exception: Exception = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}
        self.original_exception = original_exception


class InvalidInputException(HintsSolverException):
    """Raised when an argument or config value is out of its allowed range."""
    def __init__(self, field_name: str, message: str, details: dict = None):
        super().__init__(message, details={"field_name": field_name, **(details or {})})
        self.field_name = field_name


class ShapeMismatchException(HintsSolverException):
    """Raised when array dimensions do not agree."""
    def __init__(self, operation: str, expected, actual):
        message = f"{operation}: expected shape {expected}, got {actual}"
        super().__init__(message, details={"operation": operation, "expected": expected, "actual": actual})


class EmptyDomainException(HintsSolverException):
    """Raised when a geometry has no interior grid node."""
    def __init__(self, kind: str, n_side: int):
        message = f"Geometry '{kind}' has no interior node on a {n_side}-point grid"
        super().__init__(message, details={"kind": kind, "n_side": n_side})


class AssemblyException(HintsSolverException):
    """Raised when the finite-difference system cannot be assembled."""
    pass


class ZeroDiagonalException(HintsSolverException):
    """Raised by relaxation sweeps on a zero diagonal entry."""
    def __init__(self, row: int):
        super().__init__(f"Zero diagonal entry in row {row}", details={"row": row})
        self.row = row


class SingularMatrixException(HintsSolverException):
    """Raised when a dense factorization is singular to working precision."""
    pass


class CholeskyFailureException(HintsSolverException):
    """Raised when a covariance matrix cannot be factored even after jitter escalation."""
    pass


class TrainingDivergedException(HintsSolverException):
    """Raised when the training loss becomes non-finite."""
    def __init__(self, epoch: int, batch: int, loss: float):
        message = f"Non-finite training loss {loss} at epoch {epoch}, batch {batch}"
        super().__init__(message, details={"epoch": epoch, "batch": batch, "loss": loss})
        self.epoch = epoch
        self.batch = batch


class GenerationFailedException(HintsSolverException):
    """Raised when too many dataset samples could not be solved."""
    pass


class SerializationException(HintsSolverException):
    """Raised when an artifact file cannot be read or written."""
    pass


class VersionMismatchException(SerializationException):
    """Raised when a file header carries an unexpected magic or version."""
    def __init__(self, path: str, expected: str, found: str):
        message = f"{path}: expected format {expected}, found {found}"
        super().__init__(message, details={"path": path, "expected": expected, "found": found})


class HashMismatchException(SerializationException):
    """Raised when the stored content hash does not match the payload."""
    def __init__(self, path: str, expected: str, actual: str):
        message = f"{path}: content hash mismatch"
        super().__init__(message, details={"path": path, "expected": expected, "actual": actual})


class ConfigParseException(HintsSolverException):
    """Raised for unreadable or invalid experiment config files."""
    def __init__(self, source: str, message: str, field: str = None, line: int = None, column: int = None):
        location = ""
        if field:
            location = f" (field '{field}')"
        elif line is not None:
            location = f" (line {line}, column {column})"
        super().__init__(
            f"{source}: {message}{location}",
            details={"source": source, "field": field, "line": line, "column": column}
        )
        self.field = field
        self.line = line
