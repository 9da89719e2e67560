# grf.py
"""
Gaussian random fields with squared-exponential covariance

    C_ij = σ·exp(-|x_i - x_j|² / (2l²)) + jitter·δ_ij

sampled through a dense Cholesky factor (point sets here are small).
"""

from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist

from exceptions import CholeskyFailureException, InvalidInputException
from logging_config import get_logger
from pydantic_models import GrfConfig

logger = get_logger(__name__)

MAX_JITTER = 1e-6
DEFAULT_LENGTH_SCALE_1D = 0.1


def _points_2d(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[0] == 0:
        raise InvalidInputException("points", "at least one point is required")
    return p


def covariance_matrix(points, cfg: GrfConfig, jitter: Optional[float] = None) -> np.ndarray:
    p = _points_2d(points)
    sq_dist = cdist(p, p, metric="sqeuclidean")
    C = cfg.sigma * np.exp(-sq_dist / (2.0 * cfg.length_scale ** 2))
    C[np.diag_indices_from(C)] += cfg.jitter if jitter is None else jitter
    return C


def _jitter_ladder(start: float):
    jitter = start
    yield jitter
    jitter = max(jitter * 10.0, 1e-12)
    while jitter <= MAX_JITTER:
        yield jitter
        jitter *= 10.0


class GaussianRandomField:
    """Factors the covariance of a point set once; draws any number of samples."""

    def __init__(self, points, cfg: GrfConfig):
        self.points = _points_2d(points)
        self.cfg = cfg
        self.L = None
        for jitter in _jitter_ladder(cfg.jitter):
            try:
                self.L = sla.cholesky(covariance_matrix(self.points, cfg, jitter), lower=True)
                self.jitter = jitter
                break
            except sla.LinAlgError:
                logger.debug(f"Cholesky failed with jitter {jitter:g}, escalating")
        if self.L is None:
            raise CholeskyFailureException(
                f"Covariance of {self.points.shape[0]} points is not factorizable with jitter <= {MAX_JITTER:g}",
                details={"n_points": self.points.shape[0], "sigma": cfg.sigma, "length_scale": cfg.length_scale}
            )
        if self.jitter != cfg.jitter:
            logger.warning(f"GRF covariance needed jitter {self.jitter:g}", extra={"jitter": self.jitter})

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def sample(self, rng: np.random.Generator, count: Optional[int] = None) -> np.ndarray:
        """One field of shape (n_points,), or (count, n_points) when count is given."""
        if count is None:
            z = rng.standard_normal(self.n_points)
            return self.cfg.mean + self.L @ z
        z = rng.standard_normal((self.n_points, count))
        return (self.cfg.mean + self.L @ z).T


def sample(points, cfg: GrfConfig, rng: np.random.Generator) -> np.ndarray:
    return GaussianRandomField(points, cfg).sample(rng)


def grid_points_1d(n_points: int) -> np.ndarray:
    return np.arange(1, n_points + 1, dtype=np.float64) / (n_points + 1)


def field_1d(n_points: int, std: float, length_scale: float = DEFAULT_LENGTH_SCALE_1D,
             jitter: float = 1e-10) -> GaussianRandomField:
    """Squared-exponential field on the interior nodes i/(n+1) with pointwise std `std`."""
    if n_points < 1:
        raise InvalidInputException("n_points", "n_points must be at least 1")
    cfg = GrfConfig(sigma=std ** 2, length_scale=length_scale, jitter=jitter)
    return GaussianRandomField(grid_points_1d(n_points), cfg)


def sample_1d(n_points: int, std: float, rng: np.random.Generator) -> np.ndarray:
    return field_1d(n_points, std).sample(rng)
