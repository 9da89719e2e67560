# experiments.py
"""
Experiment runners behind the command-line modes.

    generate   dataset file
    train      dataset (generated unless given) -> model file
    solve      one system, one method, every configured model
    sweep      geometries x resolutions x methods x J x m, in a worker pool
    diagnose   spectral-bias records and network-alone errors

Artifacts chain by hash: a model records the dataset it was trained on, a
report records the dataset and models it used.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from datagen import Dataset, generate, load_dataset, save_dataset
from deeponet import DeepOnetModel
from discretize import ComplexSparseSystem, build_system, load_system, rhs_profile, save_system
from exceptions import InvalidInputException, SerializationException
from geometry import make_geometry
from grf import GaussianRandomField, field_1d
from hints import NetworkPreconditioner, SpectralBiasObserver, deeponet_correction, hints_iterate
from linalg import DenseFactorization, ResidualHistory, gmres, relative_residual, relaxation_solve, spectral_radius
from logging_config import get_logger, log_operation
from pydantic_models import BoundaryPolicy, ExperimentConfig, GeometrySpec, HintsConfig, ModelConfig, ReportRow
from reports import mark_best, write_json, write_report, write_spectrum_csv, write_timings
from serialization import read_artifact, write_artifact
from settings import HINTS_OUTPUT_DIR, HINTS_THREADS
from training import load_model, save_model, train

logger = get_logger(__name__)

ITERATE_MAGIC = b"HSOL1"
ITERATE_VERSION = 1
CLASSICAL_METHODS = ("gs", "jacobi", "gmres")
# per-variant model fields that are re-derived when a ModelRef switches variant
_VARIANT_FIELDS = {
    "variant", "n_sensors", "branch_widths", "trunk_widths",
    "branch_activation", "trunk_activation", "training_geometries",
}


@dataclass
class ExperimentResult:
    """What a run produced: report rows (solve/sweep) and artifact paths by name."""
    mode: str
    rows: List[ReportRow] = field(default_factory=list)
    artifacts: Dict[str, str] = field(default_factory=dict)
    hashes: Dict[str, str] = field(default_factory=dict)

    @property
    def any_diverged(self) -> bool:
        return any(row.outcome == "diverged" for row in self.rows)


@dataclass
class LoadedModel:
    name: str
    model: DeepOnetModel
    content_hash: str


@dataclass
class SolveCase:
    """One report row to compute."""
    system_key: Tuple[str, int]
    method: str
    model: Optional[LoadedModel] = None
    J: Optional[int] = None
    m: Optional[int] = None


def output_dir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir or HINTS_OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ============== Systems and right-hand sides ==============

def solve_rhs(config: ExperimentConfig, system: ComplexSparseSystem, rng: np.random.Generator) -> np.ndarray:
    """
    Right-hand side of a solve run.

    `normal` draws i.i.d. N(rhs_mean, rhs_variance) values in 2D and means
    the `sines` profile in 1D; `grf` samples the training distribution.
    """
    name = config.rhs
    if name == "normal" and system.dim == 1:
        name = "sines"
    if name == "normal":
        return rng.normal(config.rhs_mean, np.sqrt(config.rhs_variance), size=system.n)
    if name == "grf":
        if system.dim == 1:
            return field_1d(system.n, config.dataset.std_1d).sample(rng)
        return GaussianRandomField(system.coords, config.dataset.grf).sample(rng)
    return rhs_profile(name, system.coords)


def build_run_system(config: ExperimentConfig, geometry_spec: GeometrySpec, resolution: int,
                     rng: np.random.Generator) -> ComplexSparseSystem:
    geometry = make_geometry(geometry_spec)
    if geometry.dim != config.dim:
        raise InvalidInputException("geometry", f"{geometry.label} is not a {config.dim}D geometry")
    system = build_system(geometry, resolution, config.wavenumber(), config.bc)
    return system.with_rhs(solve_rhs(config, system, rng))


# ============== Datasets and models ==============

def obtain_dataset(config: ExperimentConfig, out: Path, result: ExperimentResult) -> Dataset:
    """Load config.dataset_path, or generate the configured dataset into out/."""
    if config.dataset_path:
        dataset = load_dataset(config.dataset_path)
        result.artifacts["dataset"] = str(config.dataset_path)
    else:
        dataset = generate(config.dataset)
        path = out / "dataset.hdat"
        save_dataset(dataset, path)
        result.artifacts["dataset"] = str(path)
    result.hashes["dataset"] = dataset.content_hash
    return dataset


def model_config_for(config: ExperimentConfig, variant: str) -> ModelConfig:
    if variant == config.model.variant:
        return config.model
    base = config.model.model_dump(exclude=_VARIANT_FIELDS)
    n_sensors = config.dataset.resolution - 1 if config.dim == 1 else None
    return ModelConfig(**base, variant=variant, n_sensors=n_sensors)


def train_and_save(config: ExperimentConfig, model_cfg: ModelConfig, dataset: Dataset, out: Path,
                   result: ExperimentResult) -> LoadedModel:
    model, _ = train(model_cfg, dataset, config.training, seed=config.training.seed)
    path = out / f"model_{model_cfg.variant}.hnet"
    content_hash = save_model(model, path)
    result.artifacts[f"model_{model_cfg.variant}"] = str(path)
    result.hashes[f"model_{model_cfg.variant}"] = content_hash
    return LoadedModel(model_cfg.variant, model, content_hash)


def obtain_models(config: ExperimentConfig, out: Path, result: ExperimentResult) -> List[LoadedModel]:
    """Load every ModelRef with a path; train the others on one shared dataset."""
    models = []
    dataset = None
    for ref in config.models:
        if ref.path:
            model = load_model(ref.path)
            name = Path(ref.path).stem
            content_hash = str(model.metadata.get("content_hash", ""))
            result.hashes[f"model_{name}"] = content_hash
            models.append(LoadedModel(name, model, content_hash))
            continue
        if dataset is None:
            dataset = obtain_dataset(config, out, result)
        models.append(train_and_save(config, model_config_for(config, ref.variant), dataset, out, result))
    return models


# ============== Single runs ==============

def _classical_iterations(history: ResidualHistory) -> int:
    return history.iterations - history.counts.get("deeponet", 0)


def run_method(system: ComplexSparseSystem, method: str, hints: HintsConfig,
               model: Optional[LoadedModel] = None, J: Optional[int] = None,
               m: Optional[int] = None, bc_policy: Optional[BoundaryPolicy] = None
               ) -> Tuple[np.ndarray, ResidualHistory]:
    """Run one solver on system.rhs from a zero initial guess."""
    A, b = system.A, system.rhs
    if method in ("gs", "jacobi"):
        return relaxation_solve(A, b, method=method, tol=hints.tol, maxit=hints.maxit)
    if method == "gmres":
        return gmres(A, b, restart=m or hints.m, tol=hints.tol, maxit=hints.maxit)
    if model is None:
        raise InvalidInputException("models", f"method '{method}' needs a model")
    cfg = hints.model_copy(update={
        "inner": "gs" if method == "hints_gs" else "gmres",
        "J": J or hints.J,
        "m": m or hints.m,
    })
    run = hints_iterate(system, model.model, cfg, bc_policy=bc_policy)
    return run.x, run.history


def report_row(system: ComplexSparseSystem, case: SolveCase, hints: HintsConfig,
               history: ResidualHistory, seconds: float, include_time: bool) -> ReportRow:
    hybrid = case.method not in CLASSICAL_METHODS
    return ReportRow(
        geometry=system.geometry.label,
        h=system.h,
        method=case.method,
        model=case.model.name if hybrid and case.model else "",
        J=(case.J or hints.J) if hybrid else None,
        alpha=hints.alpha if hybrid else None,
        m=(case.m or hints.m) if case.method in ("gmres", "hints_gmres") else None,
        outcome=history.outcome,
        classical_iters=_classical_iterations(history),
        deeponet_iters=history.counts.get("deeponet", 0),
        relres=history.final_relres,
        seconds=seconds if include_time else 0.0,
        conv_rate=history.conv_rate(),
    )


def save_iterate(x: np.ndarray, row: ReportRow, path) -> str:
    return write_artifact(path, ITERATE_MAGIC, ITERATE_VERSION, {"row": row.model_dump()}, {"x": x})


def load_iterate(path) -> Tuple[np.ndarray, dict]:
    manifest, arrays = read_artifact(path, ITERATE_MAGIC, ITERATE_VERSION)
    return arrays["x"], manifest["row"]


def verify_iterate(system_path, iterate_path, rtol: float = 1e-9) -> float:
    """
    Recompute the relative residual of a stored final iterate against its
    stored system and compare with the reported value.
    """
    system = load_system(system_path)
    x, row = load_iterate(iterate_path)
    relres = relative_residual(system.A, x, system.rhs)
    reported = row["relres"]
    if np.isfinite(reported) and not np.isclose(relres, reported, rtol=rtol, atol=1e-15):
        raise SerializationException(
            "Stored iterate does not reproduce its reported residual",
            details={"recomputed": relres, "reported": reported}
        )
    return relres


# ============== Modes ==============

@log_operation("generate")
def run_generate(config: ExperimentConfig) -> ExperimentResult:
    result = ExperimentResult("generate")
    obtain_dataset(config.model_copy(update={"dataset_path": None}), output_dir(config), result)
    return result


@log_operation("train")
def run_train(config: ExperimentConfig) -> ExperimentResult:
    result = ExperimentResult("train")
    out = output_dir(config)
    dataset = obtain_dataset(config, out, result)
    train_and_save(config, config.model, dataset, out, result)
    return result


def _execute(cases: List[SolveCase], systems: Dict[Tuple[str, int], ComplexSparseSystem],
             config: ExperimentConfig, out: Path) -> Tuple[List[ReportRow], List[Tuple[str, float]]]:
    def run_case(index: int) -> Tuple[ReportRow, float]:
        case = cases[index]
        system = systems[case.system_key]
        start = time.perf_counter()
        x, history = run_method(system, case.method, config.hints, case.model, case.J, case.m, config.bc)
        seconds = time.perf_counter() - start
        row = report_row(system, case, config.hints, history, seconds, config.report_wall_time)
        save_iterate(x, row, out / "iterates" / f"run_{index:03d}.hsol")
        return row, seconds

    (out / "iterates").mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=HINTS_THREADS) as executor:
        outcomes = list(executor.map(run_case, range(len(cases))))
    rows = [row for row, _ in outcomes]
    timings = [(f"run_{i:03d} {row.method} {row.geometry}", seconds) for i, (row, seconds) in enumerate(outcomes)]
    return rows, timings


def _finish_report(result: ExperimentResult, config: ExperimentConfig, out: Path,
                   timings: List[Tuple[str, float]]) -> ExperimentResult:
    mark_best(result.rows)
    echo = {"experiment": config.model_dump(mode="json"), "hashes": dict(sorted(result.hashes.items()))}
    csv_path, json_path = write_report(result.rows, out, echo)
    result.artifacts["report_csv"] = str(csv_path)
    result.artifacts["report_json"] = str(json_path)
    result.artifacts["timings"] = str(write_timings(timings, out / "timings.csv"))
    diverged = sum(1 for row in result.rows if row.outcome == "diverged")
    logger.info(
        f"{config.mode}: {len(result.rows)} runs, {diverged} diverged",
        extra={"rows": len(result.rows), "diverged": diverged}
    )
    return result


def _save_systems(systems: Dict[Tuple[str, int], ComplexSparseSystem], out: Path) -> None:
    (out / "systems").mkdir(parents=True, exist_ok=True)
    for index, system in enumerate(systems.values()):
        save_system(system, out / "systems" / f"system_{index:03d}.hsys")


@log_operation("solve")
def run_solve(config: ExperimentConfig) -> ExperimentResult:
    result = ExperimentResult("solve")
    out = output_dir(config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0, 0]))
    system = build_run_system(config, config.geometry, config.resolution, rng)
    key = (system.geometry.label, config.resolution)
    systems = {key: system}

    if config.method in CLASSICAL_METHODS:
        cases = [SolveCase(key, config.method)]
    else:
        cases = [SolveCase(key, config.method, model) for model in obtain_models(config, out, result)]
    _save_systems(systems, out)
    result.rows, timings = _execute(cases, systems, config, out)
    return _finish_report(result, config, out, timings)


def sweep_cases(config: ExperimentConfig, keys: List[Tuple[str, int]],
                models: List[LoadedModel]) -> List[SolveCase]:
    """Cross product of the sweep lists; classical methods ignore J and models."""
    sweep = config.sweep
    cases = []
    for key in keys:
        for method in sweep.methods:
            if method in ("gs", "jacobi"):
                cases.append(SolveCase(key, method))
            elif method == "gmres":
                cases.extend(SolveCase(key, method, m=m) for m in sweep.m)
            else:
                for model in models:
                    for J in sweep.J:
                        if method == "hints_gs":
                            cases.append(SolveCase(key, method, model, J=J))
                        else:
                            cases.extend(SolveCase(key, method, model, J=J, m=m) for m in sweep.m)
    return cases


@log_operation("sweep")
def run_sweep(config: ExperimentConfig) -> ExperimentResult:
    result = ExperimentResult("sweep")
    out = output_dir(config)
    geometries = config.sweep.geometries or [config.geometry]
    resolutions = config.sweep.resolutions or [config.resolution]

    systems: Dict[Tuple[str, int], ComplexSparseSystem] = {}
    for gi, geometry_spec in enumerate(geometries):
        for ri, resolution in enumerate(resolutions):
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, gi, ri]))
            system = build_run_system(config, geometry_spec, resolution, rng)
            systems[(system.geometry.label, resolution)] = system

    hybrid = any(method not in CLASSICAL_METHODS for method in config.sweep.methods)
    models = obtain_models(config, out, result) if hybrid else []
    cases = sweep_cases(config, list(systems), models)
    _save_systems(systems, out)
    result.rows, timings = _execute(cases, systems, config, out)
    return _finish_report(result, config, out, timings)


def network_alone_error(operator, system: ComplexSparseSystem, rhs: np.ndarray,
                        alpha: float, std_floor: float) -> float:
    """Relative L2 error of one normalized network application against the direct solve."""
    exact = DenseFactorization(system.A).solve(rhs.astype(np.complex128))
    approx = deeponet_correction(operator, rhs, alpha, std_floor)
    return float(np.linalg.norm(approx - exact) / np.linalg.norm(exact))


@log_operation("diagnose")
def run_diagnose(config: ExperimentConfig) -> ExperimentResult:
    """
    Spectral bias of the hybrid run (1D) and the network-alone error on a
    training-like GRF right-hand side versus sin(2πx).
    """
    result = ExperimentResult("diagnose")
    out = output_dir(config)
    loaded = obtain_models(config, out, result)[0]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0, 0]))
    system = build_run_system(config, config.geometry, config.resolution, rng)
    operator = NetworkPreconditioner(loaded.model, system, config.bc)

    summary: Dict[str, object] = {
        "model": loaded.name,
        "geometry": system.geometry.label,
        "h": system.h,
        "gs_spectral_radius": spectral_radius(system.A, "gs"),
    }
    grf_rhs = solve_rhs(config.model_copy(update={"rhs": "grf"}), system, rng)
    summary["network_alone"] = {
        "grf": network_alone_error(operator, system, grf_rhs, config.hints.alpha, config.hints.std_floor),
        "sin2pi": network_alone_error(
            operator, system, rhs_profile("sin2pi", system.coords), config.hints.alpha, config.hints.std_floor
        ),
    }

    if system.dim == 1:
        x_exact = DenseFactorization(system.A).solve(system.rhs)
        observer = SpectralBiasObserver.for_system(system, x_exact)
        run = hints_iterate(system, operator, config.hints, observer=observer)
        summary["run"] = run.summary(include_time=config.report_wall_time).model_dump()
        summary["deeponet_low_mode_reduction"] = observer.reduction_rate("deeponet", "low")
        classical = "gs" if config.hints.inner == "gs" else "gmres"
        summary[f"{classical}_high_mode_reduction"] = observer.reduction_rate(classical, "high")
        result.artifacts["spectrum"] = str(write_spectrum_csv(observer.records, out / "spectrum.csv"))
        result.artifacts["history"] = str(out / "history.csv")
        run.history.to_csv(out / "history.csv")
    else:
        logger.info("Mode spectrum needs a 1D system; reporting network-alone errors only")

    summary["hashes"] = dict(sorted(result.hashes.items()))
    result.artifacts["diagnose"] = str(write_json(summary, out / "diagnose.json"))
    return result


RUNNERS = {
    "generate": run_generate,
    "train": run_train,
    "solve": run_solve,
    "sweep": run_sweep,
    "diagnose": run_diagnose,
}


def run(config: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[config.mode](config)
