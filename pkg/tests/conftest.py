"""
Pytest configuration and shared fixtures.

Provides small geometries, assembled systems, datasets and tiny models.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from datagen import generate
from discretize import build_system, rhs_profile
from geometry import make_geometry
from pydantic_models import DatasetSpec, ModelConfig, TrainingConfig


# ============== Geometry Fixtures ==============

@pytest.fixture
def unit_square():
    return make_geometry("unit_square")


@pytest.fixture
def interval():
    return make_geometry("interval")


@pytest.fixture
def half_square():
    """Left half of the unit square; its x = 0.5 edge is an inner (Dirichlet) boundary."""
    return make_geometry({"kind": "rectangle", "params": {"rect": [0.0, 0.0, 0.5, 1.0]}})


# ============== System Fixtures ==============

@pytest.fixture
def system_1d(interval):
    """N = 30 intervals, k = 25, `sines` right-hand side."""
    system = build_system(interval, 30, 25.0)
    return system.with_rhs(rhs_profile("sines", system.coords))


@pytest.fixture
def poisson_1d(interval):
    """k = 0 counterpart of system_1d; Gauss-Seidel converges on it."""
    system = build_system(interval, 30, 0.0)
    return system.with_rhs(rhs_profile("sines", system.coords))


@pytest.fixture
def system_2d(unit_square):
    """Impedance unit square, n_side = 15, k² = 21, N(10, 10) right-hand side."""
    system = build_system(unit_square, 15, math.sqrt(21.0))
    rng = np.random.default_rng(0)
    return system.with_rhs(rng.normal(10.0, math.sqrt(10.0), size=system.n))


# ============== Data and Model Fixtures ==============

@pytest.fixture(scope="session")
def tiny_dataset_1d():
    """Four exact samples on the 1D training grid."""
    return generate(DatasetSpec(dim=1, n_samples=4, k=25.0, seed=3))


@pytest.fixture
def tiny_model_config_1d():
    return ModelConfig(
        variant="masked", dim=1, n_sensors=29, p=8,
        branch_widths=[29, 16, 8], trunk_widths=[2, 16, 8],
    )


@pytest.fixture
def tiny_training_config():
    return TrainingConfig(epochs=3, batch_size=2, learning_rate=1e-3, seed=11)
