# pydantic_models.py
"""
Configuration and report records.

Every experiment config file is validated into these models; report rows are
emitted from them as well, so CSV, JSON and --print-config share one schema.
"""

import math
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

GeometryKind = Literal[
    "unit_square", "rectangle", "rect_minus_rect", "l_shape",
    "crack_slit", "multi_obstacle", "custom_boolean", "interval",
]
Variant = Literal["masked", "non_masked", "vanilla", "ga_vanilla"]
Method = Literal["gs", "jacobi", "gmres", "hints_gs", "hints_gmres"]

DEFAULT_K_SQUARED_2D = 21.0
DEFAULT_K_1D = 25.0
DEFAULT_N_SIDE = 15
DEFAULT_N_INTERVALS = 30


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ============== Geometry Models ==============
class GeometrySpec(_Strict):
    """Catalog tag plus shape parameters; see geometry.make_geometry"""
    kind: GeometryKind = "unit_square"
    params: Dict[str, Any] = Field(default_factory=dict)

    @property
    def label(self) -> str:
        if not self.params:
            return self.kind
        if "epsilon" in self.params:
            return f"{self.kind}(eps={self.params['epsilon']})"
        return f"{self.kind}{_short_params(self.params)}"


def _short_params(params: Dict[str, Any]) -> str:
    parts = [f"{key}={value}" for key, value in sorted(params.items())]
    return "(" + ";".join(parts).replace(" ", "") + ")"


class BoundaryPolicy(_Strict):
    """Boundary-condition tag for outer-box faces and for inner (cut) faces"""
    outer: Literal["impedance", "dirichlet"] = "impedance"
    inner: Literal["dirichlet", "impedance"] = "dirichlet"


# ============== Data Models ==============
class GrfConfig(_Strict):
    """Squared-exponential Gaussian random field"""
    sigma: float = Field(default=0.1, gt=0)
    length_scale: float = Field(default=0.1, gt=0)
    mean: float = 0.0
    jitter: float = Field(default=1e-10, ge=0)
    seed: int = 0


def default_training_geometries() -> List[GeometrySpec]:
    return [
        GeometrySpec(kind="unit_square"),
        GeometrySpec(kind="rectangle", params={"rect": [0.0, 0.0, 1.0, 0.5]}),
        GeometrySpec(kind="rectangle", params={"rect": [0.0, 0.0, 0.5, 1.0]}),
        GeometrySpec(kind="l_shape"),
        GeometrySpec(kind="rect_minus_rect", params={"hole": [0.5, 0.5, 0.6, 0.6]}),
    ]


class DatasetSpec(_Strict):
    """What to solve for a training set"""
    dim: Literal[1, 2] = 2
    geometries: List[GeometrySpec] = Field(default_factory=default_training_geometries)
    n_samples: int = Field(default=300, ge=1)
    k: Optional[float] = None
    k_squared: Optional[float] = None
    resolution: Optional[int] = None
    bc: BoundaryPolicy = Field(default_factory=BoundaryPolicy)
    grf: GrfConfig = Field(default_factory=GrfConfig)
    std_1d: float = Field(default=0.02, gt=0)
    epsilon: Optional[float] = None
    seed: int = 0

    @field_validator("epsilon")
    @classmethod
    def _epsilon_range(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not 0 < value < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        return value

    @model_validator(mode="after")
    def _fill_defaults(self) -> "DatasetSpec":
        if self.dim == 1:
            if self.resolution is None:
                self.resolution = DEFAULT_N_INTERVALS
            if self.geometries == default_training_geometries():
                self.geometries = [GeometrySpec(kind="interval")]
        elif self.resolution is None:
            self.resolution = DEFAULT_N_SIDE
        return self

    def wavenumber(self) -> float:
        return resolve_wavenumber(self.dim, self.k, self.k_squared)


def resolve_wavenumber(dim: int, k: Optional[float], k_squared: Optional[float]) -> float:
    if k is not None:
        return float(k)
    if k_squared is not None:
        return math.sqrt(k_squared)
    return DEFAULT_K_1D if dim == 1 else math.sqrt(DEFAULT_K_SQUARED_2D)


# ============== Network Models ==============
class ModelConfig(_Strict):
    """Architecture of one DeepONet variant (real and imaginary nets share it)"""
    variant: Variant = "masked"
    dim: Literal[1, 2] = 2
    p: int = Field(default=80, ge=1)
    n_sensors: Optional[int] = None
    branch_widths: Optional[List[int]] = None
    trunk_widths: Optional[List[int]] = None
    branch_activation: Optional[str] = None
    trunk_activation: Optional[str] = None
    collapse: Literal["learned", "sum"] = "learned"
    conv_channels: List[int] = Field(default_factory=lambda: [1, 40, 60, 100])
    ga_encoding: Literal["channel", "twin"] = "channel"
    training_geometries: Optional[List[str]] = None
    seed: int = 0

    @model_validator(mode="after")
    def _fill_defaults(self) -> "ModelConfig":
        cnn = self.variant in ("vanilla", "ga_vanilla")
        if cnn and self.dim != 2:
            raise ValueError(f"variant '{self.variant}' is only defined in 2D")
        if self.n_sensors is None:
            self.n_sensors = 225 if self.dim == 2 else DEFAULT_N_INTERVALS - 1
        p = self.p
        if self.branch_widths is None:
            if not cnn:
                self.branch_widths = [self.n_sensors, 200, 100, p]
            elif self.variant == "ga_vanilla" and self.ga_encoding == "twin":
                self.branch_widths = [2 * self.conv_channels[-1], 80, p]
            else:
                self.branch_widths = [self.conv_channels[-1], 80, p]
        if self.trunk_widths is None:
            self.trunk_widths = [self.dim + 1, 200, 100, p] if not cnn else [2, 80, 80, p]
        if self.branch_activation is None:
            self.branch_activation = "relu" if cnn else "tanh"
        if self.trunk_activation is None:
            self.trunk_activation = "tanh" if cnn else "sin"
        if self.training_geometries is None and self.variant == "vanilla":
            self.training_geometries = ["unit_square"]
        if self.branch_widths[-1] != p or self.trunk_widths[-1] != p:
            raise ValueError("branch and trunk terminal widths must both equal p")
        if not cnn and self.branch_widths[0] != self.n_sensors:
            raise ValueError("first branch width must equal the sensor count")
        return self


class TrainingConfig(_Strict):
    """Optimizer and schedule"""
    epochs: int = Field(default=1000, ge=1)
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=1e-4, gt=0)
    decay_epoch: int = Field(default=800, ge=1)
    decay_factor: float = Field(default=0.5, gt=0)
    seed: int = 0


# ============== Solver Models ==============
class HintsConfig(_Strict):
    """Hybrid iteration parameters"""
    J: int = Field(default=6, ge=1)
    alpha: float = Field(default=0.3, gt=0)
    theta: float = Field(default=1.0, ge=0, le=1)
    inner: Literal["gs", "gmres"] = "gs"
    m: int = Field(default=30, ge=1)
    tol: float = Field(default=1e-12, gt=0, lt=1)
    maxit: int = Field(default=2000, ge=1)
    std_floor: float = Field(default=1e-14, ge=0)


class ModelRef(_Strict):
    """A model used by solve/sweep: an existing file or a variant to train"""
    variant: Variant = "masked"
    path: Optional[str] = None


class SweepSpec(_Strict):
    """Lists crossed by the sweep mode"""
    methods: List[Method] = Field(default_factory=lambda: ["gs", "hints_gs"])
    J: List[int] = Field(default_factory=lambda: [2, 4, 6, 8, 12])
    m: List[int] = Field(default_factory=lambda: [30])
    resolutions: List[int] = Field(default_factory=list)
    geometries: List[GeometrySpec] = Field(default_factory=list)

    @field_validator("methods", "J", "m")
    @classmethod
    def _nonempty(cls, value: list) -> list:
        if not value:
            raise ValueError("sweep lists must be nonempty")
        return value


class ExperimentConfig(_Strict):
    """Top-level experiment file"""
    mode: Literal["generate", "train", "solve", "sweep", "diagnose"] = "solve"
    dim: Literal[1, 2] = 2
    geometry: GeometrySpec = Field(default_factory=GeometrySpec)
    resolution: Optional[int] = None
    k: Optional[float] = None
    k_squared: Optional[float] = None
    bc: BoundaryPolicy = Field(default_factory=BoundaryPolicy)
    rhs: Literal["normal", "sines", "sin2pi", "grf", "ones"] = "normal"
    rhs_mean: float = 10.0
    rhs_variance: float = Field(default=10.0, ge=0)
    method: Method = "hints_gs"
    models: List[ModelRef] = Field(default_factory=lambda: [ModelRef()])
    hints: HintsConfig = Field(default_factory=HintsConfig)
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    dataset_path: Optional[str] = None
    output_dir: Optional[str] = None
    seed: int = 0
    report_wall_time: bool = False
    strict: bool = False

    @model_validator(mode="after")
    def _fill_defaults(self) -> "ExperimentConfig":
        if self.resolution is None:
            self.resolution = DEFAULT_N_INTERVALS if self.dim == 1 else DEFAULT_N_SIDE
        if self.dim == 1 and self.geometry.kind == "unit_square":
            self.geometry = GeometrySpec(kind="interval")
        if self.dataset.dim != self.dim:
            self.dataset = DatasetSpec(**{**self.dataset.model_dump(exclude={"geometries"}), "dim": self.dim})
        sensors_1d = self.dataset.resolution - 1
        if self.model.dim != self.dim or (self.dim == 1 and self.model.n_sensors != sensors_1d):
            self.model = ModelConfig(**{
                **self.model.model_dump(exclude={"branch_widths", "trunk_widths", "n_sensors"}),
                "dim": self.dim,
                "n_sensors": sensors_1d if self.dim == 1 else None,
            })
        if not self.models:
            raise ValueError("at least one model entry is required")
        return self

    def wavenumber(self) -> float:
        return resolve_wavenumber(self.dim, self.k, self.k_squared)


# ============== Report Models ==============
REPORT_COLUMNS = [
    "geometry", "h", "method", "model", "J", "alpha", "m", "outcome",
    "classical_iters", "deeponet_iters", "relres", "seconds", "conv_rate", "best",
]


class ReportRow(BaseModel):
    """One solver run in a solve/sweep report"""
    geometry: str
    h: float
    method: str
    model: str = ""
    J: Optional[int] = None
    alpha: Optional[float] = None
    m: Optional[int] = None
    outcome: Literal["converged", "diverged", "max_iter"]
    classical_iters: int
    deeponet_iters: int = 0
    relres: float
    seconds: float = 0.0
    conv_rate: float = float("nan")
    best: bool = False


class RunSummary(BaseModel):
    """JSON summary of a single hybrid run"""
    outcome: str
    iterations: int
    counts: Dict[str, int]
    final_relres: float
    conv_rate: float
    stagnated: bool = False
    seconds: float = 0.0
