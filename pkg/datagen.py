# datagen.py
"""
Training data: Gaussian random right-hand sides solved on the training
geometries, exactly (dense LU) or to a tolerance ε with GMRES, stored as
HDAT1 files.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from discretize import ComplexSparseSystem, build_system
from exceptions import GenerationFailedException, HintsSolverException, SerializationException
from geometry import Geometry, SensorSet, build_sensor_set, make_geometry
from grf import GaussianRandomField, field_1d
from hints import SensorRestriction
from linalg import DenseFactorization, gmres, relative_residual
from logging_config import get_logger, log_operation
from pydantic_models import DatasetSpec, GeometrySpec
from serialization import read_artifact, write_artifact
from settings import HINTS_PROGRESS, HINTS_THREADS

logger = get_logger(__name__)

DATASET_MAGIC = b"HDAT1"
DATASET_VERSION = 1
EXACT_RESIDUAL_BOUND = 1e-10
MAX_SKIP_FRACTION = 0.05


def spec_hash(spec: DatasetSpec) -> str:
    return hashlib.sha256(json.dumps(spec.model_dump(), sort_keys=True).encode()).hexdigest()


@dataclass
class DatasetGroup:
    """All samples of one geometry."""
    geometry_spec: GeometrySpec
    f_sensors: np.ndarray
    f_nodes: np.ndarray
    u: np.ndarray
    coords: np.ndarray
    relres: np.ndarray
    method: str
    _geometry: Optional[Geometry] = field(default=None, repr=False)
    _sensors: Optional[SensorSet] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.f_sensors.shape[0]

    @property
    def geometry(self) -> Geometry:
        if self._geometry is None:
            self._geometry = make_geometry(self.geometry_spec)
        return self._geometry

    def sensors(self, spec: DatasetSpec) -> SensorSet:
        if self._sensors is None:
            self._sensors = build_sensor_set(self.geometry, spec.bc, n_intervals=spec.resolution)
        return self._sensors


@dataclass
class Dataset:
    spec: DatasetSpec
    groups: List[DatasetGroup]
    content_hash: str = ""

    @property
    def n_samples(self) -> int:
        return sum(group.size for group in self.groups)

    @property
    def residual_bound(self) -> float:
        return self.spec.epsilon if self.spec.epsilon is not None else EXACT_RESIDUAL_BOUND


def _sampling_field(spec: DatasetSpec, system: ComplexSparseSystem) -> GaussianRandomField:
    if spec.dim == 1:
        return field_1d(system.n, spec.std_1d)
    return GaussianRandomField(system.coords, spec.grf)


def _generate_group(spec: DatasetSpec, gi: int, geometry_spec: GeometrySpec, progress: tqdm):
    geometry = make_geometry(geometry_spec)
    system = build_system(geometry, spec.resolution, spec.wavenumber(), spec.bc)
    sensors = build_sensor_set(geometry, spec.bc, n_intervals=spec.resolution)
    restriction = SensorRestriction(system, sensors)
    field_sampler = _sampling_field(spec, system)
    factorization = DenseFactorization(system.A) if spec.epsilon is None else None
    bound = spec.epsilon if spec.epsilon is not None else EXACT_RESIDUAL_BOUND

    def solve_sample(s: int):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, gi, s]))
        f = field_sampler.sample(rng)
        try:
            if factorization is not None:
                u = factorization.solve(f.astype(np.complex128))
            else:
                u, history = gmres(system.A, f, tol=spec.epsilon, maxit=4 * system.n)
                if history.outcome != "converged":
                    raise GenerationFailedException(f"GMRES ended {history.outcome}")
            relres = relative_residual(system.A, u, f)
        except HintsSolverException as e:
            logger.warning(f"Sample {s} on {geometry.label} skipped: {e.message}")
            return None
        finally:
            progress.update(1)
        if not relres <= bound:
            logger.warning(f"Sample {s} on {geometry.label} skipped: residual {relres:.2e} above {bound:.0e}")
            return None
        return f, u, relres

    with ThreadPoolExecutor(max_workers=HINTS_THREADS) as executor:
        results = list(executor.map(solve_sample, range(spec.n_samples)))

    kept = [r for r in results if r is not None]
    skipped = len(results) - len(kept)
    n_sensors = sensors.n_sensors
    group = DatasetGroup(
        geometry_spec=geometry_spec,
        f_sensors=np.array([restriction.apply(f) for f, _, _ in kept]).reshape(len(kept), n_sensors),
        f_nodes=np.array([f for f, _, _ in kept]).reshape(len(kept), system.n),
        u=np.array([u for _, u, _ in kept], dtype=np.complex128).reshape(len(kept), system.n),
        coords=system.coords,
        relres=np.array([r for _, _, r in kept], dtype=np.float64),
        method="dense" if spec.epsilon is None else "gmres",
        _geometry=geometry,
        _sensors=sensors,
    )
    return group, skipped


@log_operation("generate_dataset")
def generate(spec: DatasetSpec) -> Dataset:
    """
    Solve spec.n_samples GRF right-hand sides on every geometry of the spec.

    Raises:
        GenerationFailedException: more than 5% of the samples were skipped
    """
    total = spec.n_samples * len(spec.geometries)
    groups = []
    skipped = 0
    with tqdm(total=total, desc="generate", disable=None if HINTS_PROGRESS else True) as progress:
        for gi, geometry_spec in enumerate(spec.geometries):
            group, group_skipped = _generate_group(spec, gi, geometry_spec, progress)
            groups.append(group)
            skipped += group_skipped

    if skipped > MAX_SKIP_FRACTION * total:
        raise GenerationFailedException(
            f"{skipped} of {total} samples could not be solved",
            details={"skipped": skipped, "total": total}
        )
    if skipped:
        logger.warning(f"Skipped {skipped} of {total} samples", extra={"skipped": skipped})

    dataset = Dataset(spec=spec, groups=groups)
    logger.info(
        f"Generated {dataset.n_samples} samples on {len(groups)} geometries",
        extra={"spec_hash": spec_hash(spec)}
    )
    return dataset


# ============== HDAT1 files ==============

def _dataset_arrays(dataset: Dataset) -> dict:
    arrays = {}
    for gi, group in enumerate(dataset.groups):
        arrays[f"g{gi}.f_sensors"] = group.f_sensors
        arrays[f"g{gi}.f_nodes"] = group.f_nodes
        arrays[f"g{gi}.u"] = group.u
        arrays[f"g{gi}.coords"] = group.coords
        arrays[f"g{gi}.relres"] = group.relres
    return arrays


@log_operation("save_dataset")
def save_dataset(dataset: Dataset, path) -> str:
    manifest = {
        "format": "HDAT1",
        "spec": dataset.spec.model_dump(),
        "spec_hash": spec_hash(dataset.spec),
        "geometries": [group.geometry_spec.model_dump() for group in dataset.groups],
        "methods": [group.method for group in dataset.groups],
        "n_samples": dataset.n_samples,
    }
    dataset.content_hash = write_artifact(path, DATASET_MAGIC, DATASET_VERSION, manifest, _dataset_arrays(dataset))
    return dataset.content_hash


@log_operation("load_dataset")
def load_dataset(path, verify_residuals: bool = False) -> Dataset:
    """
    Read an HDAT1 file.

    Args:
        verify_residuals: re-assemble every system and check each stored
            solution against its recorded residual bound
    """
    manifest, arrays = read_artifact(path, DATASET_MAGIC, DATASET_VERSION)
    spec = DatasetSpec(**manifest["spec"])
    groups = []
    for gi, (geometry_dump, method) in enumerate(zip(manifest["geometries"], manifest["methods"])):
        groups.append(DatasetGroup(
            geometry_spec=GeometrySpec(**geometry_dump),
            f_sensors=arrays[f"g{gi}.f_sensors"],
            f_nodes=arrays[f"g{gi}.f_nodes"],
            u=arrays[f"g{gi}.u"],
            coords=arrays[f"g{gi}.coords"],
            relres=arrays[f"g{gi}.relres"],
            method=method,
        ))
    dataset = Dataset(spec=spec, groups=groups, content_hash=manifest["content_hash"])
    if verify_residuals:
        verify_dataset(dataset)
    return dataset


def verify_dataset(dataset: Dataset) -> None:
    """Recompute every stored residual; raises SerializationException on the first failure."""
    spec = dataset.spec
    for group in dataset.groups:
        system = build_system(group.geometry, spec.resolution, spec.wavenumber(), spec.bc)
        for s in range(group.size):
            relres = relative_residual(system.A, group.u[s], group.f_nodes[s])
            if not relres <= max(dataset.residual_bound, group.relres[s]) * (1 + 1e-6):
                raise SerializationException(
                    f"Stored sample {s} on {group.geometry.label} fails residual re-verification",
                    details={"relres": relres, "bound": dataset.residual_bound}
                )
