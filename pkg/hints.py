# hints.py
"""
Hybrid iteration: classical steps (Gauss-Seidel sweeps or GMRES(m) cycles)
interleaved with a normalized network correction every J-th step.

    x <- x + θ·(s_R/α)·N(α·Re r/s_R) + i·θ·(s_I/α)·N(α·Im r/s_I),   r = b - Ax

where s_R, s_I are the population standard deviations of the residual's
real and imaginary parts. The network sees the residual restricted to its
sensor grid and is evaluated at the unknowns of the solve grid through the
trunk, so any solve resolution works.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np
import scipy.sparse as sp
import torch

from deeponet import DeepOnetModel, SensorTensors
from discretize import ComplexSparseSystem, analytic_modes_1d
from exceptions import InvalidInputException
from geometry import SensorSet, build_sensor_set, zero_extend
from linalg import ResidualHistory, classify, gauss_seidel_sweep, gmres_cycle, record_cycle
from logging_config import get_logger
from pydantic_models import BoundaryPolicy, HintsConfig, RunSummary

logger = get_logger(__name__)

SNAP_TOL = 1e-9
LOW_MODES = 3

ChannelOperator = Callable[[np.ndarray], np.ndarray]
StepObserver = Callable[[str, np.ndarray, np.ndarray], None]


def complex_std(v) -> complex:
    """std(Re v) + i·std(Im v), population normalization."""
    v = np.asarray(v)
    return complex(np.std(v.real), np.std(v.imag) if np.iscomplexobj(v) else 0.0)


# ============== Sensor restriction ==============

class SensorRestriction:
    """
    Bilinear (linear in 1D) interpolation from the unknowns of a solve grid to
    the sensors, as a sparse matrix. Excluded grid nodes count as zero; a
    sensor whose surrounding nodes are all excluded gets 0 and is counted.
    """

    def __init__(self, system: ComplexSparseSystem, sensors: SensorSet):
        self.system = system
        self.sensors = sensors
        self.warnings = 0
        self.matrix = self._build()
        if self.warnings:
            logger.warning(
                f"{self.warnings} sensors have no surrounding unknowns on the solve grid",
                extra={"count": self.warnings, "resolution": system.resolution}
            )

    def _unknown_of(self, ix: int, iy: int) -> int:
        system = self.system
        if system.dim == 1:
            return ix - 1 if 1 <= ix <= system.resolution - 1 else -1
        n_side = system.resolution
        if not (0 <= ix < n_side and 0 <= iy < n_side):
            return -1
        return int(system.mask.unknown_index[iy * n_side + ix])

    @staticmethod
    def _bracket(position: float):
        nearest = round(position)
        if abs(position - nearest) < SNAP_TOL:
            return int(nearest), 0.0
        base = int(np.floor(position))
        return base, position - base

    def _build(self) -> sp.csr_matrix:
        system = self.system
        sensors = self.sensors
        rows, cols, vals = [], [], []
        for s in np.flatnonzero(sensors.unmasked):
            point = sensors.d[s]
            ix, tx = self._bracket(point[0] / system.h)
            if system.dim == 1:
                iy, ty = 0, 0.0
            else:
                iy, ty = self._bracket(point[1] / system.h)
            found = False
            for dx, wx in ((0, 1.0 - tx), (1, tx)):
                for dy, wy in ((0, 1.0 - ty), (1, ty)):
                    weight = wx * wy
                    if weight == 0.0:
                        continue
                    col = self._unknown_of(ix + dx, iy + dy)
                    if col >= 0:
                        rows.append(s)
                        cols.append(col)
                        vals.append(weight)
                        found = True
            if not found:
                self.warnings += 1
        return sp.csr_matrix((vals, (rows, cols)), shape=(sensors.n_sensors, system.n))

    def apply(self, values: np.ndarray) -> np.ndarray:
        return zero_extend(self.matrix @ np.asarray(values, dtype=np.float64), self.sensors)


def restrict_to_sensors(r: np.ndarray, system: ComplexSparseSystem, sensors: SensorSet) -> np.ndarray:
    """Real-valued residual channel on the solve grid -> values at all sensors."""
    return SensorRestriction(system, sensors).apply(r)


# ============== Network operator ==============

class NetworkPreconditioner:
    """
    A trained model bound to one solve system. Trunk features at the unknowns
    are computed once; each application costs one branch pass.
    """

    def __init__(self, model: DeepOnetModel, system: ComplexSparseSystem,
                 bc_policy: Optional[BoundaryPolicy] = None):
        if model.config.dim != system.dim:
            raise InvalidInputException("model", f"{model.config.dim}D model cannot precondition a {system.dim}D system")
        self.model = model
        self.system = system
        self.sensors = build_sensor_set(system.geometry, bc_policy, n_intervals=model.config.n_sensors + 1)
        self.restriction = SensorRestriction(system, self.sensors)
        self.features: SensorTensors = model.sensor_tensors(self.sensors)
        dist = system.geometry.sdf(system.coords) if model.uses_distance else None
        with torch.no_grad():
            self.trunk = model.trunk_forward(system.coords, dist)
        if model.config.training_geometries and system.geometry.kind not in model.config.training_geometries:
            logger.info(
                f"Model '{model.variant}' was trained on {model.config.training_geometries}, "
                f"applied to {system.geometry.label}"
            )

    def __call__(self, channel: np.ndarray) -> np.ndarray:
        f_sensors = self.restriction.apply(channel)
        with torch.no_grad():
            branch = self.model.branch_forward(f_sensors, self.sensors, self.features)
            real, imag = self.model.combine(branch, self.trunk)
        return real.numpy() + 1j * imag.numpy()


def deeponet_correction(operator: ChannelOperator, r: np.ndarray, alpha: float,
                        std_floor: float = 1e-14) -> np.ndarray:
    """
    Normalized network correction for a complex residual.

    Each channel is scaled to std α before the network and scaled back
    after; a channel with std below std_floor contributes nothing.
    """
    r = np.asarray(r, dtype=np.complex128)
    s = complex_std(r)
    correction = np.zeros_like(r)
    if s.real > std_floor:
        correction += (s.real / alpha) * np.asarray(operator(alpha * r.real / s.real))
    if s.imag > std_floor:
        correction += 1j * (s.imag / alpha) * np.asarray(operator(alpha * r.imag / s.imag))
    return correction


def as_operator(model_or_operator: Union[DeepOnetModel, ChannelOperator], system: ComplexSparseSystem,
                bc_policy: Optional[BoundaryPolicy] = None) -> ChannelOperator:
    if isinstance(model_or_operator, DeepOnetModel):
        return NetworkPreconditioner(model_or_operator, system, bc_policy)
    if not callable(model_or_operator):
        raise InvalidInputException("model", "expected a DeepOnetModel or a callable")
    return model_or_operator


# ============== Hybrid iteration ==============

@dataclass
class HintsResult:
    x: np.ndarray
    history: ResidualHistory
    seconds: float

    def summary(self, include_time: bool = True) -> RunSummary:
        return RunSummary(
            outcome=self.history.outcome,
            iterations=self.history.iterations,
            counts=dict(self.history.counts),
            final_relres=self.history.final_relres,
            conv_rate=self.history.conv_rate(),
            stagnated=self.history.stagnated,
            seconds=self.seconds if include_time else 0.0,
        )


def hints_iterate(system: ComplexSparseSystem, model: Union[DeepOnetModel, ChannelOperator],
                  cfg: HintsConfig, x0: Optional[np.ndarray] = None,
                  observer: Optional[StepObserver] = None,
                  bc_policy: Optional[BoundaryPolicy] = None) -> HintsResult:
    """
    Run Hints-GS(J) or Hints-GMRES(m, J).

    The step counter starts at 1; steps with n mod J == 0 apply the network
    correction, all others one classical unit (one sweep, or one GMRES(m)
    cycle warm-started from the current iterate). A network step always
    counts as an iteration and records a "deeponet" entry, even when the
    operator returns zero and the iterate is unchanged.
    """
    operator = as_operator(model, system, bc_policy)
    A, b = system.A, system.rhs
    x = np.zeros(system.n, dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    nb = float(np.linalg.norm(b)) or 1.0

    start = time.perf_counter()
    history = ResidualHistory()
    history.record(np.linalg.norm(b - A @ x) / nb, "initial")
    status = classify(history.final_relres, cfg.tol)
    step = 1
    while status is None and history.iterations < cfg.maxit:
        previous = x
        with np.errstate(over="ignore", invalid="ignore"):
            if step % cfg.J == 0:
                phase = "deeponet"
                x = x + cfg.theta * deeponet_correction(operator, b - A @ x, cfg.alpha, cfg.std_floor)
                history.record(np.linalg.norm(b - A @ x) / nb, phase)
            elif cfg.inner == "gs":
                phase = "gs"
                x = gauss_seidel_sweep(A, x, b)
                history.record(np.linalg.norm(b - A @ x) / nb, phase)
            else:
                phase = "gmres"
                cycle = gmres_cycle(A, b, x, min(cfg.m, cfg.maxit - history.iterations), cfg.tol)
                x = cycle.x
                record_cycle(history, cycle, phase)
        if observer is not None:
            observer(phase, previous, x)
        status = classify(history.final_relres, cfg.tol)
        step += 1

    history.outcome = status or "max_iter"
    seconds = time.perf_counter() - start
    logger.info(
        f"Hints-{cfg.inner.upper()}(J={cfg.J}) {history.outcome}: {history.iterations} iterations, "
        f"relres={history.final_relres:.3e}",
        extra={"counts": dict(history.counts), "seconds": seconds}
    )
    return HintsResult(x, history, seconds)


# ============== Spectral diagnostic ==============

def mode_spectrum(e: np.ndarray, modes) -> np.ndarray:
    """Energy |<e, v_j>|² of e in each normalized sine mode."""
    basis = np.array([v / np.linalg.norm(v) for _, v in modes])
    return np.abs(basis @ np.asarray(e)) ** 2


@dataclass
class SpectralBiasObserver:
    """
    Records, per step, the error energy in low modes (j <= 3) and high modes
    (j >= n/2) before and after the step.
    """
    x_exact: np.ndarray
    modes: list
    records: List[dict] = field(default_factory=list)

    @classmethod
    def for_system(cls, system: ComplexSparseSystem, x_exact: np.ndarray) -> "SpectralBiasObserver":
        if system.dim != 1:
            raise InvalidInputException("system", "the mode diagnostic needs a 1D Dirichlet system")
        return cls(x_exact, analytic_modes_1d(system.n, system.h, system.k))

    def _bands(self, x: np.ndarray):
        energy = mode_spectrum(x - self.x_exact, self.modes)
        n = len(self.modes)
        return float(energy[:LOW_MODES].sum()), float(energy[(n + 1) // 2 - 1:].sum()), energy

    def __call__(self, phase: str, before: np.ndarray, after: np.ndarray) -> None:
        low_before, high_before, _ = self._bands(before)
        low_after, high_after, spectrum = self._bands(after)
        self.records.append({
            "step": len(self.records) + 1,
            "phase": phase,
            "low_before": low_before,
            "low_after": low_after,
            "high_before": high_before,
            "high_after": high_after,
            "spectrum": spectrum,
        })

    def reduction_rate(self, phase: str, band: str) -> float:
        """Fraction of steps of a phase that lowered the band's energy."""
        steps = [r for r in self.records if r["phase"] == phase]
        if not steps:
            return float("nan")
        lowered = sum(1 for r in steps if r[f"{band}_after"] < r[f"{band}_before"])
        return lowered / len(steps)
