# geometry.py
"""
Domains on [0,1]^2 (and the unit interval) described by signed distance
functions, their rasterization onto uniform grids, and the fixed 15x15
sensor set fed to the network branch.

Sign convention: positive inside, negative outside, zero on the boundary.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from exceptions import EmptyDomainException, InvalidInputException, ShapeMismatchException
from logging_config import get_logger
from pydantic_models import BoundaryPolicy, GeometrySpec

logger = get_logger(__name__)

BOUNDARY_TOL = 1e-10
SENSOR_SIDE = 15
MASK_SENTINEL = -1e30
SENSOR_INTERVALS_1D = 30

DIRECTIONS_2D: Tuple[Tuple[int, int], ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))


class NodeKind(IntEnum):
    OUTSIDE = 0
    INSIDE = 1
    IMPEDANCE = 2
    DIRICHLET = 3


# ============== SDF primitives ==============

def _as_points(points, dim: int = 2) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if dim == 1 and (p.ndim == 0 or p.shape[-1] != 1):
        p = p[..., None]
    if p.shape[-1] != dim:
        raise ShapeMismatchException("sdf", f"(..., {dim})", p.shape)
    return p


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0,x1]x[y0,y1]; extents may be infinite."""
    x0: float
    y0: float
    x1: float
    y1: float
    outer: bool = False

    def extents(self, cut: bool) -> Tuple[float, float, float, float]:
        if not (cut and self.outer):
            return self.x0, self.y0, self.x1, self.y1
        # faces lying on the unit box are pushed to infinity
        x0 = -np.inf if self.x0 <= 0.0 else self.x0
        y0 = -np.inf if self.y0 <= 0.0 else self.y0
        x1 = np.inf if self.x1 >= 1.0 else self.x1
        y1 = np.inf if self.y1 >= 1.0 else self.y1
        return x0, y0, x1, y1

    def sdf(self, p: np.ndarray, cut: bool = False) -> np.ndarray:
        x0, y0, x1, y1 = self.extents(cut)
        with np.errstate(invalid="ignore"):
            dx = np.maximum(x0 - p[..., 0], p[..., 0] - x1)
            dy = np.maximum(y0 - p[..., 1], p[..., 1] - y1)
        outside = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
        inside = np.minimum(np.maximum(dx, dy), 0.0)
        return -(outside + inside)


@dataclass(frozen=True)
class Disc:
    cx: float
    cy: float
    r: float
    outer: bool = False

    def sdf(self, p: np.ndarray, cut: bool = False) -> np.ndarray:
        return self.r - np.hypot(p[..., 0] - self.cx, p[..., 1] - self.cy)


@dataclass(frozen=True)
class Segment:
    """The unit interval; both end points sit on the outer box."""
    a: float = 0.0
    b: float = 1.0

    def sdf(self, p: np.ndarray, cut: bool = False) -> np.ndarray:
        x = p[..., 0]
        if cut:
            return np.full(x.shape, np.inf)
        return np.minimum(x - self.a, self.b - x)


@dataclass(frozen=True)
class Boolean:
    op: str
    a: Any
    b: Any

    def sdf(self, p: np.ndarray, cut: bool = False) -> np.ndarray:
        da = self.a.sdf(p, cut)
        db = self.b.sdf(p, cut)
        if self.op == "union":
            return np.maximum(da, db)
        if self.op == "intersect":
            return np.minimum(da, db)
        return np.minimum(da, -db)


Shape = Union[Rect, Disc, Segment, Boolean]


def union(a: Shape, b: Shape) -> Boolean:
    return Boolean("union", a, b)


def intersect(a: Shape, b: Shape) -> Boolean:
    return Boolean("intersect", a, b)


def subtract(a: Shape, b: Shape) -> Boolean:
    return Boolean("subtract", a, b)


@dataclass(frozen=True)
class Geometry:
    """A catalog domain: tag, parameters and the composed distance function."""
    kind: str
    params: Dict[str, Any]
    shape: Shape
    dim: int = 2

    def sdf(self, points) -> np.ndarray:
        return self.shape.sdf(_as_points(points, self.dim))

    def cut_sdf(self, points) -> np.ndarray:
        """Same composition with the unit-box faces removed; zero only on inner boundaries."""
        return self.shape.sdf(_as_points(points, self.dim), cut=True)

    @property
    def label(self) -> str:
        return GeometrySpec(kind=self.kind, params=self.params).label


# ============== Catalog ==============

def _rect_param(params: Dict[str, Any], key: str, default) -> List[float]:
    value = params.get(key, default)
    if len(value) != 4:
        raise InvalidInputException(key, f"'{key}' needs four numbers [x0, y0, x1, y1]")
    x0, y0, x1, y1 = (float(v) for v in value)
    if not (x0 < x1 and y0 < y1):
        raise InvalidInputException(key, f"'{key}' must satisfy x0 < x1 and y0 < y1")
    return [x0, y0, x1, y1]


def _check_unit_box(field_name: str, values: List[float]):
    if any(v < 0.0 or v > 1.0 for v in values):
        raise InvalidInputException(field_name, f"'{field_name}' must lie in [0,1]^2", {"value": values})


def _hole(x0: float, y0: float, x1: float, y1: float) -> Rect:
    # holes touching the unit box are extended past it so coincident faces vanish
    return Rect(
        -np.inf if x0 <= 0.0 else x0,
        -np.inf if y0 <= 0.0 else y0,
        np.inf if x1 >= 1.0 else x1,
        np.inf if y1 >= 1.0 else y1,
    )


def _primitive(entry, outer: bool) -> Shape:
    values = [float(v) for v in entry]
    if len(values) == 4:
        _check_unit_box("obstacle", values)
        return Rect(*values, outer=outer) if outer else _hole(*values)
    if len(values) == 3:
        cx, cy, r = values
        if r <= 0:
            raise InvalidInputException("obstacle", "disc radius must be positive")
        return Disc(cx, cy, r, outer=outer)
    raise InvalidInputException("obstacle", "expected [x0, y0, x1, y1] or [cx, cy, r]", {"value": entry})


def _unit_square() -> Rect:
    return Rect(0.0, 0.0, 1.0, 1.0, outer=True)


def _build_shape(kind: str, params: Dict[str, Any]) -> Tuple[Shape, int]:
    if kind == "unit_square":
        return _unit_square(), 2

    if kind == "interval":
        return Segment(), 1

    if kind == "rectangle":
        rect = _rect_param(params, "rect", [0.0, 0.0, 1.0, 0.5])
        _check_unit_box("rect", rect)
        return Rect(*rect, outer=True), 2

    if kind == "rect_minus_rect":
        if "epsilon" in params:
            eps = float(params["epsilon"])
            if not 0.0 < eps < 0.5:
                raise InvalidInputException("epsilon", "epsilon must lie in (0, 0.5)")
            hole = [0.5, 0.5, 0.5 + eps, 0.5 + eps]
        else:
            hole = _rect_param(params, "hole", [0.5, 0.5, 0.6, 0.6])
        _check_unit_box("hole", hole)
        return subtract(_unit_square(), _hole(*hole)), 2

    if kind == "l_shape":
        cx, cy = (float(v) for v in params.get("corner", [0.5, 0.5]))
        _check_unit_box("corner", [cx, cy])
        return subtract(_unit_square(), _hole(cx, cy, 1.0, 1.0)), 2

    if kind == "crack_slit":
        x = float(params.get("x", 0.5))
        width = float(params.get("width", 0.02))
        y0 = float(params.get("y0", 0.35))
        y1 = float(params.get("y1", 1.0))
        if width <= 0 or not y0 < y1:
            raise InvalidInputException("crack_slit", "slit needs width > 0 and y0 < y1")
        slit = [x - width / 2, y0, x + width / 2, y1]
        _check_unit_box("crack_slit", slit)
        return subtract(_unit_square(), _hole(*slit)), 2

    if kind == "multi_obstacle":
        obstacles = params.get("obstacles", [
            [0.2, 0.2, 0.35, 0.35], [0.6, 0.25, 0.75, 0.4], [0.35, 0.6, 0.5, 0.75]
        ])
        if not obstacles:
            raise InvalidInputException("obstacles", "multi_obstacle needs at least one obstacle")
        shape: Shape = _unit_square()
        for entry in obstacles:
            shape = subtract(shape, _primitive(entry, outer=False))
        return shape, 2

    if kind == "custom_boolean":
        base = _rect_param(params, "base", [0.0, 0.0, 1.0, 1.0])
        _check_unit_box("base", base)
        shape = Rect(*base, outer=True)
        for op in params.get("ops", []):
            name = op.get("op")
            if name not in ("union", "intersect", "subtract"):
                raise InvalidInputException("ops", f"unknown boolean op '{name}'")
            prim = _primitive(op.get("args", []), outer=name != "subtract")
            shape = Boolean(name, shape, prim)
        return shape, 2

    raise InvalidInputException("kind", f"unknown geometry kind '{kind}'")


def make_geometry(spec: Union[GeometrySpec, Dict[str, Any], str]) -> Geometry:
    """
    Build a catalog geometry.

    Args:
        spec: GeometrySpec, a plain dict with 'kind'/'params', or a bare kind

    Raises:
        InvalidInputException: unknown kind or parameters outside [0,1]^2
        EmptyDomainException: no node of the 15-point grid lies strictly inside
    """
    if isinstance(spec, str):
        spec = GeometrySpec(kind=spec)
    elif isinstance(spec, dict):
        spec = GeometrySpec(**spec)

    shape, dim = _build_shape(spec.kind, dict(spec.params))
    geometry = Geometry(kind=spec.kind, params=dict(spec.params), shape=shape, dim=dim)

    if dim == 2:
        probe = geometry.sdf(grid_coordinates(SENSOR_SIDE))
        if not np.any(probe > BOUNDARY_TOL):
            raise EmptyDomainException(spec.kind, SENSOR_SIDE)

    logger.debug(f"Built geometry {geometry.label}", extra={"kind": spec.kind})
    return geometry


# ============== Grid rasterization ==============

def grid_coordinates(n_side: int) -> np.ndarray:
    """Node coordinates of the n_side x n_side grid, row-major with x fastest."""
    axis = np.arange(n_side, dtype=np.float64) / (n_side - 1)
    xx, yy = np.meshgrid(axis, axis, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass(frozen=True)
class BoundaryFace:
    node: int
    normal: Tuple[int, int]
    tag: str


@dataclass
class GridMask:
    """Classification of a uniform grid against a geometry."""
    n_side: int
    h: float
    kinds: np.ndarray
    sdf_values: np.ndarray
    unknown_index: np.ndarray
    boundary_faces: List[BoundaryFace]
    geometry: Geometry
    policy: BoundaryPolicy = field(default_factory=BoundaryPolicy)

    @property
    def inside_flags(self) -> np.ndarray:
        return self.kinds == NodeKind.INSIDE

    @property
    def unknown_flags(self) -> np.ndarray:
        return self.unknown_index >= 0

    @property
    def unknown_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.unknown_index >= 0)

    @property
    def n_unknowns(self) -> int:
        return int(np.count_nonzero(self.unknown_index >= 0))

    def coordinates(self) -> np.ndarray:
        return grid_coordinates(self.n_side)

    def neighbour(self, node: int, direction: Tuple[int, int]) -> Optional[int]:
        i, j = node % self.n_side, node // self.n_side
        ni, nj = i + direction[0], j + direction[1]
        if 0 <= ni < self.n_side and 0 <= nj < self.n_side:
            return nj * self.n_side + ni
        return None


def build_grid_mask(g: Geometry, n_side: int, bc_policy: Optional[BoundaryPolicy] = None) -> GridMask:
    """
    Rasterize a 2D geometry on an n_side x n_side grid.

    Boundary nodes (|sdf| <= tol) on the unit box take the policy's outer tag;
    all others take the inner tag. Impedance nodes are unknowns, Dirichlet
    nodes are eliminated.
    """
    if g.dim != 2:
        raise InvalidInputException("geometry", "grid masks are built for 2D geometries only")
    if n_side < 3:
        raise InvalidInputException("n_side", "n_side must be at least 3")
    policy = bc_policy or BoundaryPolicy()

    coords = grid_coordinates(n_side)
    sdf_values = g.sdf(coords)
    cut_values = g.cut_sdf(coords)

    kinds = np.full(coords.shape[0], NodeKind.OUTSIDE, dtype=np.int8)
    kinds[sdf_values > BOUNDARY_TOL] = NodeKind.INSIDE
    on_boundary = np.abs(sdf_values) <= BOUNDARY_TOL
    outer = on_boundary & (cut_values > BOUNDARY_TOL)
    inner = on_boundary & ~outer
    kinds[outer] = NodeKind.IMPEDANCE if policy.outer == "impedance" else NodeKind.DIRICHLET
    kinds[inner] = NodeKind.IMPEDANCE if policy.inner == "impedance" else NodeKind.DIRICHLET

    if not np.any(kinds == NodeKind.INSIDE):
        raise EmptyDomainException(g.kind, n_side)

    is_unknown = (kinds == NodeKind.INSIDE) | (kinds == NodeKind.IMPEDANCE)
    unknown_index = np.full(coords.shape[0], -1, dtype=np.int64)
    unknown_index[is_unknown] = np.arange(int(np.count_nonzero(is_unknown)))

    mask = GridMask(
        n_side=n_side,
        h=1.0 / (n_side - 1),
        kinds=kinds,
        sdf_values=sdf_values,
        unknown_index=unknown_index,
        boundary_faces=[],
        geometry=g,
        policy=policy,
    )
    mask.boundary_faces.extend(_boundary_faces(mask))

    logger.debug(
        f"Grid mask {g.label} n_side={n_side}: {mask.n_unknowns} unknowns, "
        f"{len(mask.boundary_faces)} boundary faces",
        extra={"geometry": g.label, "n_side": n_side}
    )
    return mask


def _boundary_faces(mask: GridMask) -> List[BoundaryFace]:
    faces = []
    for node in mask.unknown_nodes:
        node = int(node)
        own_kind = mask.kinds[node]
        for direction in DIRECTIONS_2D:
            nb = mask.neighbour(node, direction)
            if nb is None:
                if own_kind == NodeKind.IMPEDANCE:
                    faces.append(BoundaryFace(node, direction, "impedance"))
                continue
            nb_kind = mask.kinds[nb]
            if nb_kind == NodeKind.DIRICHLET:
                faces.append(BoundaryFace(nb, direction, "dirichlet"))
            elif nb_kind == NodeKind.OUTSIDE:
                if own_kind == NodeKind.IMPEDANCE:
                    faces.append(BoundaryFace(node, direction, "impedance"))
                else:
                    # staircase cut between an interior node and an exterior one
                    faces.append(BoundaryFace(nb, direction, "dirichlet"))
    return faces


# ============== Sensors ==============

@dataclass
class SensorSet:
    """Sensor coordinates with per-geometry distance feature and attention mask."""
    d: np.ndarray
    O: np.ndarray
    M: np.ndarray
    unmasked: np.ndarray
    dim: int = 2

    @property
    def n_sensors(self) -> int:
        return self.d.shape[0]

    @property
    def inside_count(self) -> int:
        return int(np.count_nonzero(self.unmasked))

    @property
    def domain_image(self) -> np.ndarray:
        """Binary image of usable sensors, shape (15, 15), row index = y."""
        side = int(round(np.sqrt(self.n_sensors)))
        return self.unmasked.astype(np.float64).reshape(side, side)


def build_sensor_set(g: Geometry, bc_policy: Optional[BoundaryPolicy] = None,
                     n_intervals: int = SENSOR_INTERVALS_1D) -> SensorSet:
    """
    Sensors, distance feature and additive key mask for a geometry.

    In 2D a sensor is usable when its node on the 15-point grid is an unknown
    of the problem; in 1D the sensors are the interior nodes of an
    n_intervals grid and none is masked.
    """
    if g.dim == 1:
        d = (np.arange(1, n_intervals, dtype=np.float64) / n_intervals)[:, None]
        n = d.shape[0]
        return SensorSet(d=d, O=g.sdf(d), M=np.zeros((n, n)), unmasked=np.ones(n, dtype=bool), dim=1)

    mask = build_grid_mask(g, SENSOR_SIDE, bc_policy)
    d = grid_coordinates(SENSOR_SIDE)
    unmasked = mask.unknown_flags.copy()
    M = np.zeros((d.shape[0], d.shape[0]))
    M[:, ~unmasked] = MASK_SENTINEL
    return SensorSet(d=d, O=mask.sdf_values.copy(), M=M, unmasked=unmasked, dim=2)


def zero_extend(f, s: SensorSet) -> np.ndarray:
    """
    Place f on all sensors with exact zeros at masked ones.

    Args:
        f: either one value per sensor, or one value per unmasked sensor
    """
    values = np.asarray(f, dtype=np.float64)
    if values.shape[-1] == s.n_sensors:
        return np.where(s.unmasked, values, 0.0)
    if values.shape[-1] == s.inside_count:
        out = np.zeros(values.shape[:-1] + (s.n_sensors,))
        out[..., s.unmasked] = values
        return out
    raise ShapeMismatchException("zero_extend", (s.n_sensors,), values.shape)
