# discretize.py
"""
Second-order finite differences for  Δu + k²u = f.

1D: Dirichlet problem on (0,1) with n interior unknowns.
2D: rasterized catalog geometry; impedance faces are eliminated with a ghost
node (centered difference of  ∂u/∂ν + i·k·u = 0), Dirichlet faces drop the
coupling. Unknowns are numbered row-major over the grid.
"""

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from exceptions import AssemblyException, InvalidInputException, SerializationException, ShapeMismatchException, \
    VersionMismatchException
from geometry import DIRECTIONS_2D, Geometry, GridMask, build_grid_mask, make_geometry
from logging_config import get_logger, log_operation
from pydantic_models import BoundaryPolicy, GeometrySpec
from serialization import BinaryReader, BinaryWriter

logger = get_logger(__name__)

HSYS_MAGIC = b"HSYS"
HSYS_VERSION = 1

RhsLike = Union[None, float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class ComplexSparseSystem:
    """A x = rhs together with the grid it was assembled on."""
    A: sp.csr_matrix
    rhs: np.ndarray
    dof_map: np.ndarray
    coords: np.ndarray
    h: float
    k: float
    dim: int
    resolution: int
    geometry: Optional[Geometry] = None
    mask: Optional[GridMask] = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def with_rhs(self, rhs: RhsLike) -> "ComplexSparseSystem":
        return replace(self, rhs=_sample_rhs(rhs, self.coords))

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.rhs - self.A @ x

    def relres(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.residual(x)) / np.linalg.norm(self.rhs))


def _sample_rhs(f: RhsLike, coords: np.ndarray) -> np.ndarray:
    n = coords.shape[0]
    if f is None:
        return np.zeros(n, dtype=np.complex128)
    if callable(f):
        values = np.asarray(f(coords))
    elif np.isscalar(f):
        values = np.full(n, f)
    else:
        values = np.asarray(f)
    values = values.astype(np.complex128).ravel()
    if values.shape[0] != n:
        raise ShapeMismatchException("rhs", (n,), values.shape)
    return values


def _finish_csr(rows: List[int], cols: List[int], vals: List[complex], n: int) -> sp.csr_matrix:
    A = sp.coo_matrix(
        (np.asarray(vals, dtype=np.complex128), (np.asarray(rows), np.asarray(cols))),
        shape=(n, n),
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_1d(n_interior: int, k: float, f: RhsLike = None) -> ComplexSparseSystem:
    """
    Dirichlet Helmholtz on (0,1) with n_interior unknowns, h = 1/(n_interior+1).

    Row i reads (u[i-1] - 2u[i] + u[i+1])/h² + k²u[i] = f[i] with zero end values.
    """
    if n_interior < 2:
        raise InvalidInputException("n_interior", "need at least two interior unknowns")
    n = n_interior
    h = 1.0 / (n + 1)
    main = np.full(n, -2.0 / h**2 + k**2, dtype=np.complex128)
    off = np.full(n - 1, 1.0 / h**2, dtype=np.complex128)
    A = sp.diags([off, main, off], offsets=[-1, 0, 1], format="csr", dtype=np.complex128)
    A.sort_indices()

    coords = (np.arange(1, n + 1, dtype=np.float64) * h)[:, None]
    return ComplexSparseSystem(
        A=A,
        rhs=_sample_rhs(f, coords),
        dof_map=np.arange(1, n + 1, dtype=np.int64),
        coords=coords,
        h=h,
        k=float(k),
        dim=1,
        resolution=n + 1,
        geometry=make_geometry("interval"),
    )


@log_operation("assemble_2d")
def assemble_2d(mask: GridMask, k: float, f: RhsLike = None) -> ComplexSparseSystem:
    """
    Five-point Helmholtz operator on the unknowns of a grid mask.

    Args:
        mask: rasterized geometry from geometry.build_grid_mask
        k: wavenumber
        f: values at the unknowns, a callable of their coordinates, or a scalar

    Raises:
        AssemblyException: an unknown has no unknown neighbour
    """
    h = mask.h
    inv_h2 = 1.0 / h**2
    ghost_diag = -2.0j * k / h
    impedance_faces = {(face.node, face.normal) for face in mask.boundary_faces if face.tag == "impedance"}

    nodes = mask.unknown_nodes
    n = nodes.shape[0]
    rows: List[int] = []
    cols: List[int] = []
    vals: List[complex] = []

    for row, node in enumerate(nodes):
        node = int(node)
        diag = -4.0 * inv_h2 + k**2
        coupled = 0
        for direction in DIRECTIONS_2D:
            nb = mask.neighbour(node, direction)
            if nb is not None and mask.unknown_index[nb] >= 0:
                rows.append(row)
                cols.append(int(mask.unknown_index[nb]))
                vals.append(inv_h2)
                coupled += 1
            elif (node, direction) in impedance_faces:
                # u_ghost = u_opposite - 2h·i·k·u
                diag += ghost_diag
                opposite = mask.neighbour(node, (-direction[0], -direction[1]))
                if opposite is not None and mask.unknown_index[opposite] >= 0:
                    rows.append(row)
                    cols.append(int(mask.unknown_index[opposite]))
                    vals.append(inv_h2)
        if coupled == 0:
            raise AssemblyException(
                f"Isolated unknown at grid node {node} has no unknown neighbour",
                details={"node": node, "n_side": mask.n_side}
            )
        rows.append(row)
        cols.append(row)
        vals.append(diag)

    coords = mask.coordinates()[nodes]
    A = _finish_csr(rows, cols, vals, n)
    logger.debug(f"Assembled {n}x{n} system, nnz={A.nnz}", extra={"n": n, "nnz": A.nnz})
    return ComplexSparseSystem(
        A=A,
        rhs=_sample_rhs(f, coords),
        dof_map=nodes.astype(np.int64),
        coords=coords,
        h=h,
        k=float(k),
        dim=2,
        resolution=mask.n_side,
        geometry=mask.geometry,
        mask=mask,
    )


def build_system(geometry: Geometry, resolution: int, k: float,
                 bc_policy: Optional[BoundaryPolicy] = None, rhs: RhsLike = None) -> ComplexSparseSystem:
    """
    Assemble the system for a geometry at a resolution.

    In 1D `resolution` counts intervals (N intervals give N-1 unknowns, h=1/N);
    in 2D it is the number of grid points per axis.
    """
    if geometry.dim == 1:
        return assemble_1d(resolution - 1, k, rhs)
    mask = build_grid_mask(geometry, resolution, bc_policy)
    return assemble_2d(mask, k, rhs)


def analytic_modes_1d(n: int, h: float, k: float = 0.0) -> List[Tuple[float, np.ndarray]]:
    """Eigenpairs of the 1D Dirichlet operator: sin(jπx_i) with k² - (4/h²)sin²(jπh/2)."""
    x = np.arange(1, n + 1, dtype=np.float64) * h
    modes = []
    for j in range(1, n + 1):
        eigenvalue = k**2 - (4.0 / h**2) * np.sin(j * np.pi * h / 2.0) ** 2
        modes.append((float(eigenvalue), np.sin(j * np.pi * x)))
    return modes


def rhs_profile(name: str, coords: np.ndarray) -> np.ndarray:
    """Deterministic named right-hand sides."""
    x = coords[:, 0]
    if name == "sines":
        return np.sin(np.pi * x) + 10.0 * np.sin(3 * np.pi * x) + 10.0 * np.sin(5 * np.pi * x)
    if name == "sin2pi":
        return np.sin(2 * np.pi * x)
    if name == "ones":
        return np.ones(coords.shape[0])
    raise InvalidInputException("rhs", f"unknown right-hand side profile '{name}'")


# ============== HSYS files ==============

def save_system(system: ComplexSparseSystem, path) -> None:
    """Dump a system as HSYS (little-endian); grid data follows the matrix and rhs."""
    A = system.A
    writer = BinaryWriter()
    writer.raw(HSYS_MAGIC)
    writer.u32(HSYS_VERSION)
    writer.u32(system.dim)
    writer.u64(system.n)
    writer.f64(system.h)
    writer.f64(system.k)
    writer.vector(A.indptr, "<i8")
    writer.vector(A.indices, "<i8")
    writer.vector(A.data, "<c16")
    writer.vector(system.rhs, "<c16")

    writer.u64(system.resolution)
    writer.vector(system.dof_map, "<i8")
    writer.vector(system.coords, "<f8")
    geometry_spec = {"kind": system.geometry.kind, "params": system.geometry.params} if system.geometry else None
    policy = system.mask.policy.model_dump() if system.mask is not None else None
    writer.text(json.dumps({"geometry": geometry_spec, "bc": policy}, sort_keys=True))

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(writer.getvalue())
    except OSError as e:
        raise SerializationException(f"Cannot write {path}", original_exception=e) from e


def load_system(path) -> ComplexSparseSystem:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise SerializationException(f"Cannot read {path}", original_exception=e) from e

    reader = BinaryReader(data, str(path))
    magic = reader.raw(len(HSYS_MAGIC))
    if magic != HSYS_MAGIC:
        raise VersionMismatchException(str(path), "HSYS", magic.decode(errors="replace"))
    version = reader.u32()
    if version != HSYS_VERSION:
        raise VersionMismatchException(str(path), f"HSYS v{HSYS_VERSION}", f"v{version}")

    dim = reader.u32()
    n = reader.u64()
    h = reader.f64()
    k = reader.f64()
    indptr = reader.vector("<i8")
    indices = reader.vector("<i8")
    values = reader.vector("<c16")
    rhs = reader.vector("<c16")
    resolution = reader.u64()
    dof_map = reader.vector("<i8")
    coords = reader.vector("<f8").reshape(n, dim)
    extra = json.loads(reader.text())

    A = sp.csr_matrix((values, indices, indptr), shape=(n, n))
    geometry = make_geometry(GeometrySpec(**extra["geometry"])) if extra.get("geometry") else None
    mask = None
    if dim == 2 and geometry is not None:
        mask = build_grid_mask(geometry, int(resolution), BoundaryPolicy(**(extra.get("bc") or {})))

    return ComplexSparseSystem(
        A=A, rhs=rhs, dof_map=dof_map, coords=coords, h=h, k=k, dim=int(dim),
        resolution=int(resolution), geometry=geometry, mask=mask,
    )
