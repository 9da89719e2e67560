"""
Slow end-to-end checks on the 1D problem (k = 25, N = 30 training grid).

One masked model is trained for the whole module on 300 exact samples with
batch 64. The schedule is lr 1e-3 for 3000 epochs, halved at epoch 2400,
rather than the 1e-4 / 1000 defaults: small J needs the low modes fit to
a few percent.
"""

import pytest

from datagen import generate
from discretize import build_system, rhs_profile
from geometry import make_geometry
from hints import SpectralBiasObserver, hints_iterate
from linalg import dense_solve, relaxation_solve
from pydantic_models import DatasetSpec, HintsConfig, ModelConfig, TrainingConfig
from training import train

J_VALUES = (2, 4, 6, 8, 12)
K = 25.0


def _system(n_intervals):
    system = build_system(make_geometry("interval"), n_intervals, K)
    return system.with_rhs(rhs_profile("sines", system.coords))


def _best_run(system, model, maxit):
    """Hints-GS over the J sweep; the converged run with the fewest iterations, else the last one."""
    results = {}
    for J in J_VALUES:
        results[J] = hints_iterate(system, model, HintsConfig(J=J, alpha=0.02, maxit=maxit, tol=1e-12))
    converged = {J: r for J, r in results.items() if r.history.outcome == "converged"}
    if converged:
        J = min(converged, key=lambda j: converged[j].history.iterations)
        return J, converged[J]
    return J_VALUES[-1], results[J_VALUES[-1]]


@pytest.fixture(scope="module")
def trained_model():
    dataset = generate(DatasetSpec(dim=1, n_samples=300, k=K, std_1d=0.02, seed=0))
    model, curve = train(
        ModelConfig(variant="masked", dim=1, n_sensors=29),
        dataset,
        TrainingConfig(epochs=3000, batch_size=64, learning_rate=1e-3, decay_epoch=2400, seed=0),
    )
    return model, curve


@pytest.mark.slow
@pytest.mark.integration
class TestTrainedHintsGs:
    """Test a trained network turns diverging Gauss-Seidel into a converging solver."""

    def test_training_beats_zero_predictor(self, trained_model):
        """Test the relative loss ends far below 1, the loss of predicting zero."""
        _, curve = trained_model
        assert curve[-1] < 0.1
        assert curve[-1] < 0.1 * curve[0]

    def test_converges_where_gauss_seidel_diverges(self, trained_model):
        """Test Hints-GS reaches 1e-12 within 2000 iterations for some J; plain GS diverges."""
        model, _ = trained_model
        system = _system(30)
        _, plain = relaxation_solve(system.A, system.rhs, method="gs", tol=1e-12, maxit=2000)
        assert plain.outcome == "diverged"

        J, result = _best_run(system, model, maxit=2000)
        assert result.history.outcome == "converged", f"no J in {J_VALUES} converged"
        assert result.history.final_relres <= 1e-12
        assert result.history.iterations <= 2000
        assert result.history.counts["deeponet"] == result.history.iterations // J

    def test_network_removes_low_modes_smoother_removes_high(self, trained_model):
        """Test network steps lower the j <= 3 error and GS sweeps lower the j >= n/2 error."""
        model, _ = trained_model
        system = _system(30)
        J, _ = _best_run(system, model, maxit=2000)

        x_exact = dense_solve(system.A.toarray(), system.rhs)
        observer = SpectralBiasObserver.for_system(system, x_exact)
        # stop above the roundoff floor of the reference solution
        result = hints_iterate(system, model, HintsConfig(J=J, alpha=0.02, maxit=2000, tol=1e-10),
                               observer=observer)
        assert result.history.outcome == "converged"
        assert observer.reduction_rate("deeponet", "low") >= 0.8
        assert observer.reduction_rate("gs", "high") >= 0.8

    def test_finer_grid_without_retraining(self, trained_model):
        """Test the N = 30 model still drives Hints-GS to 1e-12 at N = 60."""
        model, _ = trained_model
        system = _system(60)
        _, result = _best_run(system, model, maxit=4000)
        assert result.history.outcome == "converged"
        assert result.history.final_relres <= 1e-12
        assert model.branch_passes > 0
