"""
Gaussian random field tests.

Tests the covariance, sample statistics, seeding and Cholesky fallback.
"""

import numpy as np
import pytest
import scipy.linalg as sla

from exceptions import CholeskyFailureException, InvalidInputException
from geometry import grid_coordinates
from grf import GaussianRandomField, covariance_matrix, field_1d, grid_points_1d, sample, sample_1d
from pydantic_models import GrfConfig


@pytest.mark.unit
@pytest.mark.grf
class TestCovariance:
    """Test the squared-exponential covariance matrix."""

    def test_diagonal_and_decay(self):
        """Test C_ii = σ + jitter and C at distance l equals σ·e^(-1/2)."""
        cfg = GrfConfig(sigma=0.1, length_scale=0.1, jitter=0.0)
        C = covariance_matrix([[0.0, 0.0], [0.1, 0.0]], cfg)
        assert C[0, 0] == pytest.approx(0.1)
        assert C[0, 1] == pytest.approx(0.1 * np.exp(-0.5))

    def test_symmetric(self):
        """Test the covariance of the sensor grid is symmetric."""
        C = covariance_matrix(grid_coordinates(15), GrfConfig())
        np.testing.assert_array_equal(C, C.T)

    def test_empty_point_set(self):
        """Test an empty point set is rejected."""
        with pytest.raises(InvalidInputException):
            covariance_matrix(np.zeros((0, 2)), GrfConfig())


@pytest.mark.unit
@pytest.mark.grf
class TestSampling:
    """Test sample statistics and determinism."""

    def test_variance_on_sensor_grid(self):
        """Test the empirical pointwise variance over 10^4 samples is σ within 5%."""
        field = GaussianRandomField(grid_coordinates(15), GrfConfig())
        samples = field.sample(np.random.default_rng(0), count=10_000)
        assert samples.shape == (10_000, 225)
        assert np.mean(np.var(samples, axis=0)) == pytest.approx(0.1, rel=0.05)

    def test_correlation_at_length_scale(self):
        """Test the empirical correlation at distance l is e^(-1/2) within 0.05."""
        points = np.array([[0.2, 0.5], [0.3, 0.5], [0.6, 0.6], [0.7, 0.6]])
        field = GaussianRandomField(points, GrfConfig())
        samples = field.sample(np.random.default_rng(1), count=10_000)
        for a, b in ((0, 1), (2, 3)):
            correlation = np.corrcoef(samples[:, a], samples[:, b])[0, 1]
            assert abs(correlation - np.exp(-0.5)) <= 0.05

    def test_mean_shift(self):
        """Test the configured mean is added to every sample."""
        field = GaussianRandomField(grid_points_1d(20), GrfConfig(mean=10.0))
        samples = field.sample(np.random.default_rng(2), count=2000)
        assert np.mean(samples) == pytest.approx(10.0, abs=0.05)

    def test_same_seed_same_field(self):
        """Test identical seeds give identical samples."""
        points = grid_coordinates(15)
        a = sample(points, GrfConfig(), np.random.default_rng(42))
        b = sample(points, GrfConfig(), np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_one_dimensional_std(self):
        """Test the 1D field has pointwise std equal to the requested std."""
        field = field_1d(29, 0.02)
        samples = field.sample(np.random.default_rng(3), count=10_000)
        assert samples.shape == (10_000, 29)
        assert np.sqrt(np.mean(np.var(samples, axis=0))) == pytest.approx(0.02, rel=0.05)

    def test_sample_1d(self):
        """Test the 1D shortcut draws from the same field as field_1d."""
        a = sample_1d(29, 0.02, np.random.default_rng(5))
        b = field_1d(29, 0.02).sample(np.random.default_rng(5))
        assert a.shape == (29,)
        np.testing.assert_array_equal(a, b)

    def test_grid_points_1d(self):
        """Test the 1D field lives on the interior nodes i/(n+1)."""
        np.testing.assert_allclose(grid_points_1d(3), [0.25, 0.5, 0.75])


@pytest.mark.unit
@pytest.mark.grf
class TestCholeskyFallback:
    """Test jitter escalation and failure."""

    def test_escalates_after_failure(self, mocker):
        """Test a failed factorization is retried with a larger jitter."""
        real_cholesky = sla.cholesky
        calls = []

        def flaky(matrix, lower=False):
            calls.append(matrix[0, 0])
            if len(calls) == 1:
                raise sla.LinAlgError("not positive definite")
            return real_cholesky(matrix, lower=lower)

        mocker.patch("grf.sla.cholesky", side_effect=flaky)
        field = GaussianRandomField(grid_points_1d(5), GrfConfig(jitter=1e-10))
        assert field.jitter == pytest.approx(1e-9)
        assert calls[1] > calls[0]

    def test_failure_after_ladder(self, mocker):
        """Test CholeskyFailureException once every jitter level fails."""
        cholesky = mocker.patch("grf.sla.cholesky", side_effect=sla.LinAlgError("not positive definite"))
        with pytest.raises(CholeskyFailureException):
            GaussianRandomField(grid_points_1d(5), GrfConfig())
        assert cholesky.call_count > 1
