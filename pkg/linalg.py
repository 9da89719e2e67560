# linalg.py
"""
Complex sparse kernels and classical iterative solvers.

Iterative solvers never raise on divergence: they stop and report it in the
returned ResidualHistory. Inputs A and b are never modified.
"""

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numba import njit

from exceptions import InvalidInputException, ShapeMismatchException, SingularMatrixException, ZeroDiagonalException
from logging_config import get_logger

logger = get_logger(__name__)

DIVERGENCE_THRESHOLD = 1e8
STAGNATION_DROP = 1e-14

Preconditioner = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, sp.spmatrix]


@dataclass
class ResidualHistory:
    """Relative residuals per iteration (entry 0 is the initial guess) and phase labels."""
    relres: List[float] = field(default_factory=list)
    phases: List[str] = field(default_factory=list)
    outcome: str = "max_iter"
    stagnated: bool = False
    counts: Dict[str, int] = field(default_factory=dict)
    cycles: List[List[float]] = field(default_factory=list)

    def record(self, value: float, phase: str) -> None:
        self.relres.append(float(value))
        self.phases.append(phase)
        if phase != "initial":
            self.counts[phase] = self.counts.get(phase, 0) + 1

    @property
    def iterations(self) -> int:
        return max(len(self.relres) - 1, 0)

    @property
    def final_relres(self) -> float:
        return self.relres[-1]

    def conv_rate(self) -> float:
        """Mean contraction per iteration, (final/initial)^(1/iterations)."""
        if self.iterations == 0 or not self.relres[0] > 0:
            return float("nan")
        ratio = self.relres[-1] / self.relres[0]
        if not np.isfinite(ratio):
            return float("inf")
        return float(ratio ** (1.0 / self.iterations))

    def to_csv(self, target=None) -> str:
        """Write `iteration,relres,phase` rows; returns the text when no target is given."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["iteration", "relres", "phase"])
        for i, (value, phase) in enumerate(zip(self.relres, self.phases)):
            writer.writerow([i, repr(value), phase])
        text = buffer.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text


def classify(relres: float, tol: float) -> Optional[str]:
    """'converged', 'diverged' or None while the iteration should continue."""
    if not np.isfinite(relres) or relres > DIVERGENCE_THRESHOLD:
        return "diverged"
    if relres <= tol:
        return "converged"
    return None


def _norm_b(b: np.ndarray) -> float:
    nb = float(np.linalg.norm(b))
    return nb if nb > 0 else 1.0


def relative_residual(A, x: np.ndarray, b: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.linalg.norm(b - A @ x) / _norm_b(b))


def _check_square(A, b: np.ndarray, operation: str):
    if A.shape[0] != A.shape[1]:
        raise ShapeMismatchException(operation, "square matrix", A.shape)
    if b.shape[0] != A.shape[0]:
        raise ShapeMismatchException(operation, (A.shape[0],), b.shape)


# ============== Kernels ==============

def matvec(A, x) -> np.ndarray:
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ShapeMismatchException("matvec", (A.shape[1],), x.shape)
    return A @ x


@njit
def _gauss_seidel_csr(indptr, indices, data, x, b):
    # forward sweep in place; returns the first row with a zero diagonal, or -1
    n = x.shape[0]
    for i in range(n):
        rsum = 0j
        diag = 0j
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            if j == i:
                diag += data[jj]
            else:
                rsum += data[jj] * x[j]
        if diag == 0:
            return i
        x[i] = (b[i] - rsum) / diag
    return -1


def _as_csr(A) -> sp.csr_matrix:
    if sp.issparse(A):
        return sp.csr_matrix(A)
    return sp.csr_matrix(np.asarray(A))


def gauss_seidel_sweep(A, x, b) -> np.ndarray:
    """One forward Gauss-Seidel sweep; returns a new iterate."""
    A = _as_csr(A)
    b = np.ascontiguousarray(b, dtype=np.complex128)
    _check_square(A, b, "gauss_seidel_sweep")
    x_new = np.array(x, dtype=np.complex128, copy=True)
    data = np.ascontiguousarray(A.data, dtype=np.complex128)
    row = _gauss_seidel_csr(A.indptr, A.indices, data, x_new, b)
    if row >= 0:
        raise ZeroDiagonalException(int(row))
    return x_new


def jacobi_sweep(A, x, b) -> np.ndarray:
    """One Jacobi sweep; returns a new iterate."""
    b = np.asarray(b)
    _check_square(A, b, "jacobi_sweep")
    diag = np.asarray(A.diagonal())
    zero_rows = np.flatnonzero(diag == 0)
    if zero_rows.size:
        raise ZeroDiagonalException(int(zero_rows[0]))
    x = np.asarray(x, dtype=np.complex128)
    return x + (b - A @ x) / diag


_SWEEPS = {"gs": gauss_seidel_sweep, "jacobi": jacobi_sweep}


def relaxation_solve(A, b, x0=None, method: str = "gs", tol: float = 1e-12,
                     maxit: int = 1000) -> Tuple[np.ndarray, ResidualHistory]:
    """Repeated Gauss-Seidel or Jacobi sweeps with divergence detection."""
    if method not in _SWEEPS:
        raise InvalidInputException("method", f"unknown relaxation method '{method}'")
    sweep = _SWEEPS[method]
    b = np.asarray(b, dtype=np.complex128)
    x = np.zeros(b.shape[0], dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    nb = _norm_b(b)

    history = ResidualHistory()
    history.record(np.linalg.norm(b - A @ x) / nb, "initial")
    status = classify(history.final_relres, tol)
    for _ in range(maxit):
        if status is not None:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            x = sweep(A, x, b)
            history.record(np.linalg.norm(b - A @ x) / nb, method)
        status = classify(history.final_relres, tol)
    history.outcome = status or "max_iter"
    logger.debug(f"{method} finished: {history.outcome} after {history.iterations} sweeps")
    return x, history


def richardson(A, b, x0=None, precond: Preconditioner = None, theta: float = 1.0,
               tol: float = 1e-12, maxit: int = 1000) -> Tuple[np.ndarray, ResidualHistory]:
    """
    Preconditioned Richardson iteration  x <- x + θ·P(b - Ax).

    Args:
        precond: callable on residual vectors, or a matrix applied with @
    """
    if not 0 <= theta <= 1:
        raise InvalidInputException("theta", "theta must lie in [0, 1]")
    if precond is None:
        raise InvalidInputException("precond", "a preconditioner is required")
    apply = precond if callable(precond) else (lambda r: precond @ r)

    b = np.asarray(b, dtype=np.complex128)
    x = np.zeros(b.shape[0], dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    nb = _norm_b(b)

    history = ResidualHistory()
    r = b - A @ x
    history.record(np.linalg.norm(r) / nb, "initial")
    status = classify(history.final_relres, tol)
    for _ in range(maxit):
        if status is not None:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + theta * np.asarray(apply(r))
            r = b - A @ x
            history.record(np.linalg.norm(r) / nb, "richardson")
        status = classify(history.final_relres, tol)
    history.outcome = status or "max_iter"
    return x, history


# ============== GMRES ==============

@dataclass
class GmresCycle:
    x: np.ndarray
    estimates: List[float]
    relres: float
    breakdown: bool

    @property
    def steps(self) -> int:
        return len(self.estimates)


def _givens(a: complex, b: complex) -> Tuple[complex, complex, float]:
    rho = float(np.hypot(abs(a), abs(b)))
    if rho == 0.0:
        return 1.0 + 0j, 0j, 0.0
    return a / rho, b / rho, rho


def gmres_cycle(A, b: np.ndarray, x0: np.ndarray, m: int, tol: float) -> GmresCycle:
    """
    One GMRES(m) cycle from x0: Arnoldi with modified Gram-Schmidt, least
    squares by complex Givens rotations. The residual estimates are
    relative to ||b||; the cycle's final residual is recomputed explicitly.
    """
    b = np.asarray(b, dtype=np.complex128)
    x0 = np.asarray(x0, dtype=np.complex128)
    n = b.shape[0]
    nb = _norm_b(b)

    r0 = b - A @ x0
    beta = float(np.linalg.norm(r0))
    if beta / nb <= tol or beta == 0.0:
        return GmresCycle(x0.copy(), [], beta / nb, False)

    m = min(m, n)
    V = np.zeros((n, m + 1), dtype=np.complex128)
    H = np.zeros((m + 1, m), dtype=np.complex128)
    cs = np.zeros(m, dtype=np.complex128)
    sn = np.zeros(m, dtype=np.complex128)
    g = np.zeros(m + 1, dtype=np.complex128)
    g[0] = beta
    V[:, 0] = r0 / beta

    estimates: List[float] = []
    breakdown = False
    steps = 0
    for j in range(m):
        w = A @ V[:, j]
        for i in range(j + 1):
            H[i, j] = np.vdot(V[:, i], w)
            w = w - H[i, j] * V[:, i]
        h_next = float(np.linalg.norm(w))
        H[j + 1, j] = h_next

        for i in range(j):
            upper = np.conj(cs[i]) * H[i, j] + np.conj(sn[i]) * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = upper
        cs[j], sn[j], rho = _givens(H[j, j], H[j + 1, j])
        H[j, j] = rho
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = np.conj(cs[j]) * g[j]

        steps = j + 1
        estimates.append(abs(g[j + 1]) / nb)
        if h_next <= 1e-14 * beta:
            breakdown = True
            break
        if estimates[-1] <= tol:
            break
        V[:, j + 1] = w / h_next

    y = sla.solve_triangular(H[:steps, :steps], g[:steps], lower=False, check_finite=False)
    x = x0 + V[:, :steps] @ y
    true_relres = float(np.linalg.norm(b - A @ x) / nb)
    return GmresCycle(x, estimates, true_relres, breakdown)


def gmres(A, b, x0=None, restart: Optional[int] = None, tol: float = 1e-10,
          maxit: int = 1000) -> Tuple[np.ndarray, ResidualHistory]:
    """
    Restarted GMRES(m); restart=None runs full GMRES.

    Iterations are counted as inner Arnoldi steps. The last entry of every
    cycle is the explicitly recomputed residual, which also decides
    convergence. A cycle that lowers the relative residual by less than
    1e-14 marks the run as stagnated.
    """
    b = np.asarray(b, dtype=np.complex128)
    _check_square(A, b, "gmres")
    n = b.shape[0]
    x = np.zeros(n, dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    m = min(restart or n, n)

    history = ResidualHistory()
    history.record(relative_residual(A, x, b), "initial")
    status = classify(history.final_relres, tol)
    while status is None and history.iterations < maxit:
        previous = history.final_relres
        cycle = gmres_cycle(A, b, x, min(m, maxit - history.iterations), tol)
        x = cycle.x
        record_cycle(history, cycle, "gmres")
        status = classify(history.final_relres, tol)
        if status is None and previous - history.final_relres < STAGNATION_DROP:
            history.stagnated = True
            logger.warning("GMRES stagnated", extra={"relres": history.final_relres})
            break
    history.outcome = status or "max_iter"
    return x, history


def record_cycle(history: ResidualHistory, cycle: GmresCycle, phase: str) -> None:
    if cycle.steps == 0:
        return
    history.cycles.append(list(cycle.estimates))
    for value in cycle.estimates[:-1]:
        history.record(value, phase)
    history.record(cycle.relres, phase)


# ============== Dense oracle ==============

class DenseFactorization:
    """LU with partial pivoting, factored once and reused for many right-hand sides."""

    def __init__(self, A):
        A_dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        if A_dense.ndim != 2 or A_dense.shape[0] != A_dense.shape[1]:
            raise ShapeMismatchException("dense_solve", "square matrix", A_dense.shape)
        lu, piv = sla.lu_factor(A_dense, check_finite=True)
        pivots = np.abs(np.diag(lu))
        scale = pivots.max() if pivots.size else 0.0
        if scale == 0.0 or pivots.min() <= A_dense.shape[0] * np.finfo(np.float64).eps * scale:
            raise SingularMatrixException(
                "Matrix is singular to working precision",
                details={"min_pivot": float(pivots.min()) if pivots.size else 0.0, "max_pivot": float(scale)}
            )
        self.lu = lu
        self.piv = piv
        self.n = A_dense.shape[0]

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise ShapeMismatchException("dense_solve", (self.n,), b.shape)
        return sla.lu_solve((self.lu, self.piv), b)


def dense_solve(A_dense, b) -> np.ndarray:
    return DenseFactorization(A_dense).solve(b)


def spectral_radius(A, method: str = "gs") -> float:
    """Spectral radius of the Gauss-Seidel or Jacobi iteration matrix (dense eigensolve)."""
    A_dense = A.toarray() if sp.issparse(A) else np.asarray(A)
    D = np.diag(np.diag(A_dense))
    if method == "gs":
        lower = np.tril(A_dense)
        iteration = -np.linalg.solve(lower, np.triu(A_dense, 1))
    elif method == "jacobi":
        iteration = np.eye(A_dense.shape[0]) - np.linalg.solve(D, A_dense)
    else:
        raise InvalidInputException("method", f"unknown relaxation method '{method}'")
    return float(np.max(np.abs(np.linalg.eigvals(iteration))))
