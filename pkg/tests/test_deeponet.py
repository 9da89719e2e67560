"""
DeepONet tests.

Tests the four variants, masking invariance and the parameter layout.
"""

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from deeponet import DeepOnetModel, SensorTensors, per_sample_loss, TrainingGroup
from exceptions import InvalidInputException, ShapeMismatchException
from geometry import build_grid_mask, build_sensor_set, make_geometry
from pydantic_models import ModelConfig
from tensor_ad import to_tensor

MASKED_GEOMETRIES = [
    {"kind": "rectangle", "params": {"rect": [0.0, 0.0, 0.5, 1.0]}},
    {"kind": "rectangle", "params": {"rect": [0.0, 0.0, 1.0, 0.5]}},
    {"kind": "l_shape"},
    {"kind": "rect_minus_rect", "params": {"hole": [0.25, 0.5, 0.5, 0.75]}},
    {"kind": "crack_slit"},
    {"kind": "multi_obstacle"},
]


def _queries(geometry):
    mask = build_grid_mask(geometry, 15)
    return mask.coordinates()[mask.unknown_nodes]


@pytest.fixture(scope="module")
def masked_model():
    return DeepOnetModel(ModelConfig(variant="masked"), seed=7)


@pytest.mark.unit
@pytest.mark.deeponet
class TestMaskingInvariance:
    """Test outputs of the masked variant ignore f outside the domain."""

    def test_perturbing_masked_sensors(self, masked_model):
        """Test 100 (geometry, perturbation) pairs leave every output bitwise unchanged."""
        rng = np.random.default_rng(0)
        for trial in range(100):
            geometry = make_geometry(MASKED_GEOMETRIES[trial % len(MASKED_GEOMETRIES)])
            sensors = build_sensor_set(geometry)
            queries = _queries(geometry)
            f = np.where(sensors.unmasked, rng.standard_normal(225), 0.0)
            perturbed = f.copy()
            masked = ~sensors.unmasked
            perturbed[masked] = rng.uniform(-1e6, 1e6, size=int(masked.sum()))

            base = masked_model.evaluate(f, sensors, queries, geometry=geometry)
            moved = masked_model.evaluate(perturbed, sensors, queries, geometry=geometry)
            assert np.array_equal(base, moved)

    def test_non_masked_variant_is_sensitive(self):
        """Test switching the mask off lets masked sensors influence the output."""
        model = DeepOnetModel(ModelConfig(variant="non_masked"), seed=7)
        geometry = make_geometry("l_shape")
        sensors = build_sensor_set(geometry)
        queries = _queries(geometry)
        f = np.where(sensors.unmasked, 1.0, 0.0)
        perturbed = np.where(sensors.unmasked, 1.0, 5.0)
        base = model.evaluate(f, sensors, queries, geometry=geometry)
        moved = model.evaluate(perturbed, sensors, queries, geometry=geometry)
        assert not np.array_equal(base, moved)

    def test_masked_equals_non_masked_when_nothing_is_masked(self, unit_square):
        """Test both attention variants coincide on the unit square for one seed."""
        masked = DeepOnetModel(ModelConfig(variant="masked"), seed=3)
        plain = DeepOnetModel(ModelConfig(variant="non_masked"), seed=3)
        sensors = build_sensor_set(unit_square)
        f = np.random.default_rng(1).standard_normal(225)
        queries = _queries(unit_square)
        np.testing.assert_array_equal(
            masked.evaluate(f, sensors, queries, geometry=unit_square),
            plain.evaluate(f, sensors, queries, geometry=unit_square),
        )


@pytest.mark.unit
@pytest.mark.deeponet
class TestVariants:
    """Test every variant builds and evaluates to complex outputs."""

    @pytest.mark.parametrize("variant,encoding", [
        ("masked", "channel"),
        ("non_masked", "channel"),
        ("vanilla", "channel"),
        ("ga_vanilla", "channel"),
        ("ga_vanilla", "twin"),
    ])
    def test_evaluate_shapes(self, half_square, variant, encoding):
        """Test evaluate returns one complex value per query point."""
        model = DeepOnetModel(ModelConfig(variant=variant, ga_encoding=encoding), seed=0)
        sensors = build_sensor_set(half_square)
        queries = _queries(half_square)
        out = model.evaluate(np.ones(225), sensors, queries, geometry=half_square)
        assert out.shape == (queries.shape[0],)
        assert np.iscomplexobj(out)
        assert np.all(np.isfinite(out))

    def test_ga_vanilla_ignores_outside_values(self, half_square):
        """Test the geometry-aware CNN zeroes f outside the domain before convolving."""
        model = DeepOnetModel(ModelConfig(variant="ga_vanilla"), seed=0)
        sensors = build_sensor_set(half_square)
        queries = _queries(half_square)
        f = np.where(sensors.unmasked, 1.0, 0.0)
        perturbed = np.where(sensors.unmasked, 1.0, -3.0)
        np.testing.assert_array_equal(
            model.evaluate(f, sensors, queries),
            model.evaluate(perturbed, sensors, queries),
        )

    def test_one_dimensional_masked(self, interval):
        """Test the 1D attention variant on the 29 training sensors."""
        model = DeepOnetModel(ModelConfig(variant="masked", dim=1, n_sensors=29), seed=0)
        sensors = build_sensor_set(interval, n_intervals=30)
        out = model.evaluate(np.zeros(29), sensors, np.linspace(0.1, 0.9, 5)[:, None], geometry=interval)
        assert out.shape == (5,)

    def test_cnn_variants_are_two_dimensional(self):
        """Test CNN variants refuse a 1D config."""
        with pytest.raises(ValidationError):
            ModelConfig(variant="vanilla", dim=1)

    def test_terminal_widths_must_match_p(self):
        """Test branch and trunk must both end at width p."""
        with pytest.raises(ValidationError):
            ModelConfig(variant="masked", p=10, branch_widths=[225, 20, 11], trunk_widths=[3, 20, 10])

    def test_default_architecture(self):
        """Test the attention variant defaults."""
        config = ModelConfig(variant="masked")
        assert config.branch_widths == [225, 200, 100, 80]
        assert config.trunk_widths == [3, 200, 100, 80]
        assert config.trunk_activation == "sin"
        vanilla = ModelConfig(variant="vanilla")
        assert vanilla.branch_widths == [100, 80, 80]
        assert vanilla.training_geometries == ["unit_square"]


@pytest.mark.unit
@pytest.mark.deeponet
class TestModelInterface:
    """Test argument checks, pass counters and parameter export."""

    def test_query_outside_unit_box(self, masked_model, unit_square):
        """Test query points outside [0,1]^2 are rejected."""
        sensors = build_sensor_set(unit_square)
        with pytest.raises(InvalidInputException):
            masked_model.evaluate(np.zeros(225), sensors, [[1.2, 0.5]], geometry=unit_square)

    def test_distance_required(self, masked_model, unit_square):
        """Test the attention variants need a geometry or explicit distances."""
        sensors = build_sensor_set(unit_square)
        with pytest.raises(InvalidInputException):
            masked_model.evaluate(np.zeros(225), sensors, [[0.5, 0.5]])

    def test_sensor_count_checked(self, masked_model, interval):
        """Test a sensor set of the wrong size is rejected."""
        with pytest.raises(ShapeMismatchException):
            masked_model.sensor_tensors(build_sensor_set(interval))

    def test_pass_counters(self, unit_square):
        """Test branch passes count inputs and trunk passes count query points."""
        model = DeepOnetModel(ModelConfig(variant="masked"), seed=0)
        sensors = build_sensor_set(unit_square)
        model.evaluate(np.zeros(225), sensors, [[0.5, 0.5], [0.25, 0.25]], geometry=unit_square)
        assert model.branch_passes == 1
        assert model.trunk_passes == 2

    def test_batched_forward_shapes(self, interval):
        """Test batched branch and trunk passes combine into (B, Q) outputs."""
        model = DeepOnetModel(ModelConfig(variant="masked", dim=1, n_sensors=29, p=8,
                                          branch_widths=[29, 16, 8], trunk_widths=[2, 16, 8]), seed=0)
        sensors = build_sensor_set(interval, n_intervals=30)
        f = np.random.default_rng(1).standard_normal((3, 29))
        with torch.no_grad():
            branch = model.branch_forward(f, sensors)
            trunk = model.trunk_forward(sensors.d, interval.sdf(sensors.d))
            real, imag = model.combine(branch, trunk)
        assert branch[0].shape == (3, 8)
        assert trunk[0].shape == (29, 8)
        assert real.shape == imag.shape == (3, 29)
        assert model.branch_passes == 3
        with pytest.raises(ShapeMismatchException):
            model.branch_forward(np.zeros(28), sensors)

    def test_named_arrays_round_trip(self):
        """Test exported arrays load into a fresh model with a different seed."""
        source = DeepOnetModel(ModelConfig(variant="masked", dim=1, n_sensors=29), seed=1)
        source.set_scaling(0.02, 3e-4)
        target = DeepOnetModel(ModelConfig(variant="masked", dim=1, n_sensors=29), seed=2)
        target.load_arrays(source.named_arrays())
        for name, value in source.named_arrays().items():
            np.testing.assert_array_equal(value, target.named_arrays()[name])
        assert all(name.startswith(("real.", "imag.", "scale.")) for name in source.named_arrays())
        assert (target.input_scale, target.output_scale) == (0.02, 3e-4)

    def test_scaling_rejects_non_positive(self, masked_model):
        """Test zero, negative and non-finite scales are refused."""
        for bad in (0.0, -1.0, float("nan")):
            with pytest.raises(InvalidInputException):
                masked_model.set_scaling(bad, 1.0)
            with pytest.raises(InvalidInputException):
                masked_model.set_scaling(1.0, bad)

    def test_scaling_maps_units(self, interval):
        """Test scaled inputs reach the nets divided and outputs come back multiplied."""
        config = ModelConfig(variant="masked", dim=1, n_sensors=29)
        plain = DeepOnetModel(config, seed=5)
        scaled = DeepOnetModel(config, seed=5)
        scaled.set_scaling(0.02, 1e-4)
        sensors = build_sensor_set(interval, n_intervals=30)
        f = np.random.default_rng(2).standard_normal(29)
        queries = np.linspace(0.1, 0.9, 7)[:, None]
        np.testing.assert_allclose(
            scaled.evaluate(0.02 * f, sensors, queries, geometry=interval),
            1e-4 * plain.evaluate(f, sensors, queries, geometry=interval),
            rtol=1e-9, atol=1e-16,
        )

    def test_loss_is_zero_for_perfect_prediction(self, interval):
        """Test the relative loss vanishes when the targets are the model's own outputs."""
        model = DeepOnetModel(ModelConfig(variant="masked", dim=1, n_sensors=29), seed=4)
        sensors = build_sensor_set(interval, n_intervals=30)
        features = SensorTensors.build(sensors, "masked")
        coords = sensors.d
        f = to_tensor(np.random.default_rng(0).standard_normal((2, 29)))
        trunk_inputs = model.trunk_inputs(coords, interval.sdf(coords))
        with torch.no_grad():
            real = model.real.branch(f, features) @ model.real.trunk(trunk_inputs).T
            imag = model.imag.branch(f, features) @ model.imag.trunk(trunk_inputs).T
        group = TrainingGroup(features, f, trunk_inputs, real, imag)
        assert torch.all(per_sample_loss(model, group) < 1e-20)

    def test_loss_uses_model_units(self, interval):
        """Test the loss sees the same scaled outputs as evaluate."""
        model = DeepOnetModel(ModelConfig(variant="masked", dim=1, n_sensors=29), seed=4)
        model.set_scaling(0.02, 1e-4)
        sensors = build_sensor_set(interval, n_intervals=30)
        features = SensorTensors.build(sensors, "masked")
        coords = sensors.d
        f = to_tensor(0.02 * np.random.default_rng(0).standard_normal((2, 29)))
        trunk_inputs = model.trunk_inputs(coords, interval.sdf(coords))
        with torch.no_grad():
            real, imag = model.combine(model.branch_forward(f, sensors, features), model.trunk_forward(trunk_inputs))
        group = TrainingGroup(features, f, trunk_inputs, real, imag)
        assert torch.all(per_sample_loss(model, group) < 1e-20)
        shifted = TrainingGroup(features, f, trunk_inputs, real / 1e-4, imag / 1e-4)
        assert torch.all(per_sample_loss(model, shifted) > 0.9)
