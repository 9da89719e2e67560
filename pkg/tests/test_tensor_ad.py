"""
Autodiff tests.

Gradient checks of every differentiable op against central differences,
plus the optimizer and schedule.
"""

import numpy as np
import pytest
import torch

from exceptions import InvalidInputException, ShapeMismatchException
from geometry import MASK_SENTINEL
from tensor_ad import (
    AdamState,
    DTYPE,
    activation,
    adam_step,
    conv2d,
    conv_output_size,
    dense,
    finite_difference_check,
    masked_attention,
    seed_everything,
    softmax_rows,
)

GRADIENT_TOLERANCE = 1e-5
SEEDS = range(20)


def _random(generator, *shape):
    return torch.randn(*shape, generator=generator, dtype=DTYPE)


@pytest.mark.unit
@pytest.mark.autodiff
class TestGradientChecks:
    """Test autograd Jacobians against central finite differences over 20 seeds."""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_dense(self, seed):
        """Test the affine layer with respect to input, weight and bias."""
        g = torch.Generator().manual_seed(seed)
        x, W, b = _random(g, 3, 4), _random(g, 5, 4), _random(g, 5)
        assert finite_difference_check(dense, (x, W, b)) < GRADIENT_TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_smooth_activations(self, seed):
        """Test tanh, sin and identity."""
        g = torch.Generator().manual_seed(seed)
        x = _random(g, 6)
        for name in ("tanh", "sin", "identity"):
            assert finite_difference_check(activation(name), x) < GRADIENT_TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_relu_away_from_kink(self, seed):
        """Test relu on inputs bounded away from zero."""
        g = torch.Generator().manual_seed(seed)
        magnitude = _random(g, 6).abs() + 0.1
        signs = torch.tensor([1.0, -1.0, 1.0, -1.0, 1.0, -1.0], dtype=DTYPE)
        assert finite_difference_check(activation("relu"), magnitude * signs) < GRADIENT_TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_softmax(self, seed):
        """Test the row softmax."""
        g = torch.Generator().manual_seed(seed)
        assert finite_difference_check(softmax_rows, _random(g, 3, 5)) < GRADIENT_TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_masked_attention(self, seed):
        """Test attention with some columns masked by the sentinel."""
        g = torch.Generator().manual_seed(seed)
        V = _random(g, 6, 4)
        M = torch.zeros(6, 6, dtype=DTYPE)
        M[:, [1, 4]] = MASK_SENTINEL
        assert finite_difference_check(lambda v: masked_attention(v, M), V) < GRADIENT_TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv2d(self, seed):
        """Test the stride-2 valid convolution with respect to input and kernel."""
        g = torch.Generator().manual_seed(seed)
        x, w, b = _random(g, 1, 2, 7, 7), _random(g, 3, 2, 3, 3), _random(g, 3)
        assert finite_difference_check(lambda xx, ww, bb: conv2d(xx, ww, bb), (x, w, b)) < GRADIENT_TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_relative_loss(self, seed):
        """Test the relative squared error used in training."""
        g = torch.Generator().manual_seed(seed)
        target = _random(g, 2, 7)

        def loss(prediction):
            error = ((prediction - target) ** 2).sum(dim=-1)
            return (error / ((target ** 2).sum(dim=-1) + 1e-12)).mean()

        assert finite_difference_check(loss, _random(g, 2, 7)) < GRADIENT_TOLERANCE


@pytest.mark.unit
@pytest.mark.autodiff
class TestOps:
    """Test forward behaviour and argument checks of the ops."""

    def test_masked_columns_get_zero_weight(self):
        """Test attention output ignores masked rows of V entirely."""
        g = torch.Generator().manual_seed(0)
        V = _random(g, 5, 3)
        M = torch.zeros(5, 5, dtype=DTYPE)
        M[:, 2] = MASK_SENTINEL
        perturbed = V.clone()
        perturbed[2] = 1e6
        out = masked_attention(V, M)
        out_perturbed = masked_attention(perturbed, M)
        keep = [0, 1, 3, 4]
        assert torch.equal(out[keep], out_perturbed[keep])

    def test_attention_shape_check(self):
        """Test a mask of the wrong size is rejected."""
        with pytest.raises(ShapeMismatchException):
            masked_attention(torch.zeros(4, 2, dtype=DTYPE), torch.zeros(3, 3, dtype=DTYPE))

    def test_dense_shape_check(self):
        """Test mismatched inner dimensions are rejected."""
        with pytest.raises(ShapeMismatchException):
            dense(torch.zeros(2, 3, dtype=DTYPE), torch.zeros(4, 5, dtype=DTYPE), torch.zeros(4, dtype=DTYPE))

    def test_conv_sizes(self):
        """Test 15 -> 7 -> 3 -> 1 under stride-2 valid 3x3 convolutions."""
        assert [conv_output_size(s) for s in (15, 7, 3)] == [7, 3, 1]

    def test_conv_too_small(self):
        """Test an input smaller than the kernel is rejected."""
        with pytest.raises(ShapeMismatchException):
            conv2d(torch.zeros(1, 1, 2, 2, dtype=DTYPE), torch.zeros(1, 1, 3, 3, dtype=DTYPE))

    def test_unknown_activation(self):
        """Test unknown activation names are rejected."""
        with pytest.raises(InvalidInputException):
            activation("gelu")


@pytest.mark.unit
@pytest.mark.autodiff
class TestOptimizer:
    """Test Adam and the step-decay schedule."""

    def test_first_step_moves_by_learning_rate(self):
        """Test the bias-corrected first Adam step has magnitude lr."""
        p = torch.nn.Parameter(torch.zeros(3, dtype=DTYPE))
        state = AdamState([p], lr=1e-3)
        adam_step([p], [torch.tensor([1.0, -2.0, 0.5], dtype=DTYPE)], state)
        np.testing.assert_allclose(p.detach().numpy(), [-1e-3, 1e-3, -1e-3], rtol=1e-6)
        assert state.step_count == 1

    def test_learning_rate_halves_at_decay_epoch(self):
        """Test the schedule multiplies lr by the decay factor once."""
        p = torch.nn.Parameter(torch.zeros(1, dtype=DTYPE))
        state = AdamState([p], lr=1e-4, decay_epoch=2, decay_factor=0.5)
        state.end_epoch()
        assert state.lr == pytest.approx(1e-4)
        state.end_epoch()
        assert state.lr == pytest.approx(5e-5)
        state.end_epoch()
        assert state.lr == pytest.approx(5e-5)

    def test_gradient_count_checked(self):
        """Test mismatched parameter and gradient lists are rejected."""
        p = torch.nn.Parameter(torch.zeros(1, dtype=DTYPE))
        with pytest.raises(ShapeMismatchException):
            adam_step([p], [], AdamState([p]))

    def test_seed_everything(self):
        """Test the returned generator is reproducible."""
        a = torch.randn(4, generator=seed_everything(5))
        b = torch.randn(4, generator=seed_everything(5))
        assert torch.equal(a, b)
