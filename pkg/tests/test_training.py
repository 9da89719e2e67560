"""
Training tests.

Tests the Adam loop, reproducibility, divergence handling and HNET1 files.
"""

import numpy as np
import pytest
import torch

from datagen import load_dataset, save_dataset
from deeponet import DeepOnetModel
from exceptions import InvalidInputException, TrainingDivergedException, VersionMismatchException
from geometry import build_sensor_set, make_geometry
from pydantic_models import TrainingConfig
from training import fit_scaling, load_model, save_model, train, training_groups


@pytest.mark.unit
@pytest.mark.training
class TestTrain:
    """Test the training loop."""

    def test_curve_is_finite(self, tiny_dataset_1d, tiny_model_config_1d, tiny_training_config):
        """Test one loss value per epoch, all finite."""
        model, curve = train(tiny_model_config_1d, tiny_dataset_1d, tiny_training_config)
        assert len(curve) == 3
        assert all(np.isfinite(curve))
        assert model.metadata["loss_curve"] == curve
        assert model.metadata["epochs"] == 3
        assert model.metadata["seed"] == 11

    def test_reproducible(self, tiny_dataset_1d, tiny_model_config_1d, tiny_training_config):
        """Test one seed gives the same curve and parameters."""
        model_a, curve_a = train(tiny_model_config_1d, tiny_dataset_1d, tiny_training_config)
        model_b, curve_b = train(tiny_model_config_1d, tiny_dataset_1d, tiny_training_config)
        assert curve_a == curve_b
        for name, value in model_a.named_arrays().items():
            np.testing.assert_array_equal(value, model_b.named_arrays()[name])

    def test_seed_override(self, tiny_dataset_1d, tiny_model_config_1d, tiny_training_config):
        """Test an explicit seed replaces the training config seed."""
        _, curve_a = train(tiny_model_config_1d, tiny_dataset_1d, tiny_training_config)
        model, curve_b = train(tiny_model_config_1d, tiny_dataset_1d, tiny_training_config, seed=12)
        assert curve_a != curve_b
        assert model.metadata["seed"] == 12

    def test_mask_is_inert_in_one_dimension(self, tiny_dataset_1d, tiny_model_config_1d, tiny_training_config):
        """Test masked and non-masked training coincide when no sensor is masked."""
        plain_config = tiny_model_config_1d.model_copy(update={"variant": "non_masked"})
        _, masked_curve = train(tiny_model_config_1d, tiny_dataset_1d, tiny_training_config)
        _, plain_curve = train(plain_config, tiny_dataset_1d, tiny_training_config)
        assert masked_curve == plain_curve

    def test_non_finite_loss(self, mocker, tiny_dataset_1d, tiny_model_config_1d, tiny_training_config):
        """Test a NaN batch loss stops training with the epoch and batch."""
        nan = torch.tensor(float("nan"), dtype=torch.float64, requires_grad=True)
        mocker.patch("training.training_loss", return_value=nan)
        with pytest.raises(TrainingDivergedException) as excinfo:
            train(tiny_model_config_1d, tiny_dataset_1d, tiny_training_config)
        assert excinfo.value.details["epoch"] == 1
        assert excinfo.value.details["batch"] == 0

    def test_no_matching_geometry(self, tiny_dataset_1d, tiny_model_config_1d):
        """Test a model restricted to other geometries finds no samples."""
        config = tiny_model_config_1d.model_copy(update={"training_geometries": ["unit_square"]})
        with pytest.raises(InvalidInputException):
            training_groups(DeepOnetModel(config), tiny_dataset_1d)

    def test_groups_carry_distance(self, tiny_dataset_1d, tiny_model_config_1d):
        """Test attention variants get (x, sdf) trunk inputs."""
        groups = training_groups(DeepOnetModel(tiny_model_config_1d), tiny_dataset_1d)
        assert len(groups) == 1
        assert groups[0].trunk_inputs.shape == (29, 2)
        assert groups[0].f.shape == (4, 29)

    def test_scaling_fitted_from_data(self, tiny_dataset_1d, tiny_model_config_1d, tiny_training_config):
        """Test training sets input and output scales to the RMS of f and |u|."""
        group = tiny_dataset_1d.groups[0]
        model, _ = train(tiny_model_config_1d, tiny_dataset_1d, tiny_training_config)
        assert model.input_scale == pytest.approx(np.sqrt(np.mean(group.f_sensors ** 2)), rel=1e-12)
        assert model.output_scale == pytest.approx(np.sqrt(np.mean(np.abs(group.u) ** 2)), rel=1e-12)

    def test_zero_data_keeps_unit_scale(self, tiny_dataset_1d, tiny_model_config_1d):
        """Test all-zero inputs and targets leave the scales at one."""
        model = DeepOnetModel(tiny_model_config_1d)
        groups = training_groups(model, tiny_dataset_1d)
        zeroed = [type(g)(g.features, 0.0 * g.f, g.trunk_inputs, 0.0 * g.u_real, 0.0 * g.u_imag) for g in groups]
        assert fit_scaling(model, zeroed) == (1.0, 1.0)

    def test_dataset_hash_recorded(self, tmp_path, tiny_dataset_1d, tiny_model_config_1d, tiny_training_config):
        """Test the trained model references the dataset it was trained on."""
        digest = save_dataset(tiny_dataset_1d, tmp_path / "data.hdat")
        dataset = load_dataset(tmp_path / "data.hdat")
        model, _ = train(tiny_model_config_1d, dataset, tiny_training_config)
        assert model.metadata["dataset_hash"] == digest

    @pytest.mark.slow
    def test_overfits_small_dataset(self, tiny_dataset_1d, tiny_model_config_1d):
        """Test the loss falls well below its starting value on four samples."""
        _, curve = train(tiny_model_config_1d, tiny_dataset_1d, TrainingConfig(epochs=1500, batch_size=4,
                                                                               learning_rate=1e-3, seed=0))
        assert curve[-1] < 0.5 * curve[0]


@pytest.mark.unit
@pytest.mark.training
class TestModelFiles:
    """Test HNET1 save and load."""

    def test_round_trip_outputs(self, tmp_path, tiny_dataset_1d, tiny_model_config_1d, tiny_training_config):
        """Test a loaded model evaluates bitwise like the saved one."""
        model, _ = train(tiny_model_config_1d, tiny_dataset_1d, tiny_training_config)
        digest = save_model(model, tmp_path / "model.hnet")
        loaded = load_model(tmp_path / "model.hnet")

        interval = make_geometry("interval")
        sensors = build_sensor_set(interval, n_intervals=30)
        f = np.random.default_rng(0).standard_normal(29)
        queries = np.linspace(0.05, 0.95, 7)[:, None]
        np.testing.assert_array_equal(
            model.evaluate(f, sensors, queries, geometry=interval),
            loaded.evaluate(f, sensors, queries, geometry=interval),
        )
        assert loaded.metadata["content_hash"] == digest
        assert loaded.metadata["loss_curve"] == model.metadata["loss_curve"]
        assert loaded.variant == "masked"

    def test_resave_is_identical(self, tmp_path, tiny_model_config_1d):
        """Test load followed by save reproduces the file."""
        save_model(DeepOnetModel(tiny_model_config_1d, seed=3), tmp_path / "a.hnet")
        save_model(load_model(tmp_path / "a.hnet"), tmp_path / "b.hnet")
        assert (tmp_path / "a.hnet").read_bytes() == (tmp_path / "b.hnet").read_bytes()

    def test_dataset_file_is_not_a_model(self, tmp_path, tiny_dataset_1d):
        """Test loading a dataset as a model is refused."""
        save_dataset(tiny_dataset_1d, tmp_path / "data.hdat")
        with pytest.raises(VersionMismatchException):
            load_model(tmp_path / "data.hdat")
