"""
The structured Gaussian over a pixel grid.

``N(mu, Sigma)`` with precision ``Lambda = L L^T`` and ``Sigma = L^-T L^-1``,
where L is the sparse lower-triangular factor encoded by ``CholeskyMaps``.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import expit

from gridgauss.app.config.settings import settings
from gridgauss.app.core.grid import (
    CholeskyMaps,
    GridShape,
    SampleBundle,
    SparsityPattern,
    as_grid_array,
    log_effective_diagonal,
)
from gridgauss.app.core.linops import Direction, LinearOperatorView, apply, jacobi_solve, solve_triangular
from gridgauss.app.exceptions import InvalidArgumentError, ShapeMismatchError
from gridgauss.app.utils.rng import SeedLike, standard_normal

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# Rendering range of covariance-row heatmaps, in standard-deviation units
COVARIANCE_ROW_CLIP = 0.05


class ActivationKind(str, Enum):
    IDENTITY = "identity"
    SCALED_SIGMOID = "scaled_sigmoid"


@dataclass(frozen=True)
class Activation:
    """Elementwise output transform applied to latent samples."""

    kind: ActivationKind = ActivationKind.IDENTITY
    minimum: float = 0.0
    maximum: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ActivationKind(self.kind))
        if self.kind is ActivationKind.SCALED_SIGMOID and not self.minimum < self.maximum:
            raise InvalidArgumentError(
                "scaled_sigmoid needs min < max", details={"min": self.minimum, "max": self.maximum}
            )

    @classmethod
    def identity(cls) -> "Activation":
        return cls(ActivationKind.IDENTITY)

    @classmethod
    def scaled_sigmoid(cls, minimum: float, maximum: float) -> "Activation":
        return cls(ActivationKind.SCALED_SIGMOID, float(minimum), float(maximum))

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.kind is ActivationKind.IDENTITY:
            return values.copy()
        return self.minimum + (self.maximum - self.minimum) * expit(values)


@dataclass(frozen=True, eq=False)
class StructuredGaussian:
    """Mean map plus Cholesky maps of the precision."""

    mean: np.ndarray
    chol: CholeskyMaps

    def __post_init__(self):
        mean = as_grid_array(self.mean, self.chol.shape, "mean").copy()
        if mean.shape != self.chol.shape.yx:
            raise ShapeMismatchError(self.chol.shape.yx, mean.shape, "mean")
        if not np.isfinite(mean).all():
            raise InvalidArgumentError("mean map must be finite")
        mean.flags.writeable = False
        object.__setattr__(self, "mean", mean)

    @classmethod
    def standard(cls, shape: GridShape, pattern: SparsityPattern) -> "StructuredGaussian":
        """Zero mean, identity covariance."""
        return cls(np.zeros(shape.yx), CholeskyMaps.identity(shape, pattern))

    @property
    def shape(self) -> GridShape:
        return self.chol.shape

    @property
    def pattern(self) -> SparsityPattern:
        return self.chol.pattern

    @property
    def pixel_count(self) -> int:
        return self.chol.shape.pixel_count


def _log_density_batch(g: StructuredGaussian, values: np.ndarray) -> np.ndarray:
    """Per-map log-density for values of shape (S, H, W)."""
    residual = values - g.mean
    whitened = apply(LinearOperatorView(g.chol, Direction.L_TRANSPOSE), residual)
    quadratic = np.sum(whitened**2, axis=(-2, -1))
    log_det_half = float(np.sum(log_effective_diagonal(g.chol)))
    return -0.5 * g.pixel_count * LOG_2PI + log_det_half - 0.5 * quadratic


def log_density(g: StructuredGaussian, d: np.ndarray) -> float:
    """
    Exact log-density of one map.

    -(N/2) ln 2pi + sum_n ln diag_n - 1/2 ||L^T (d - mu)||^2
    """
    d = as_grid_array(d, g.shape, "map")
    if d.shape != g.shape.yx:
        raise ShapeMismatchError(g.shape.yx, d.shape, "map")
    if not np.isfinite(d).all():
        raise InvalidArgumentError("map values must be finite")
    return float(_log_density_batch(g, d[None])[0])


def log_density_per_sample(g: StructuredGaussian, bundle: SampleBundle) -> np.ndarray:
    if bundle.shape != g.shape:
        raise ShapeMismatchError(g.shape.yx, bundle.shape.yx, "bundle")
    return _log_density_batch(g, bundle.values)


def log_density_bundle(g: StructuredGaussian, bundle: SampleBundle) -> float:
    """Sum of log-densities over every map of the bundle."""
    return float(np.sum(log_density_per_sample(g, bundle)))


def sample(
    g: StructuredGaussian,
    count: int,
    seed: SeedLike,
    iterations: Optional[int] = None,
    exact: bool = False,
) -> SampleBundle:
    """
    Draw ``mu + L^-T E`` with E i.i.d. standard normal.

    The solve uses J truncated Jacobi iterations (default GMRF_JACOBI_ITERATIONS)
    or exact back-substitution when ``exact`` is set. The same seed and
    parameters always give bitwise identical bundles.
    """
    if count < 1:
        raise InvalidArgumentError("sample count must be >= 1", details={"count": count})
    noise = standard_normal(seed, (int(count),) + g.shape.yx)
    if exact:
        latent = solve_triangular(LinearOperatorView(g.chol, Direction.L_TRANSPOSE), noise)
    else:
        latent = jacobi_solve(g.chol, noise, iterations, Direction.L_TRANSPOSE).solution
    logger.debug(f"Drew {count} samples", extra={"count": count, "exact": exact, "grid": str(g.shape)})
    return SampleBundle(g.shape, g.mean + latent)


def covariance_row(
    g: StructuredGaussian,
    pixel: int,
    iterations: Optional[int] = None,
    method: str = "exact",
) -> np.ndarray:
    """
    Row ``pixel`` of Sigma as an H x W map (no mean added).

    Solves with L, then with L^T, on the one-hot vector e_k. ``method`` is
    ``"exact"`` (triangular substitution) or ``"jacobi"`` (J iterations each).
    """
    if not 0 <= int(pixel) < g.pixel_count:
        raise InvalidArgumentError(
            f"pixel index {pixel} out of range [0, {g.pixel_count})", details={"pixel": int(pixel)}
        )
    one_hot = np.zeros(g.pixel_count)
    one_hot[int(pixel)] = 1.0
    one_hot = one_hot.reshape(g.shape.yx)

    if method == "exact":
        forward = solve_triangular(LinearOperatorView(g.chol, Direction.L), one_hot)
        return solve_triangular(LinearOperatorView(g.chol, Direction.L_TRANSPOSE), forward)
    if method == "jacobi":
        forward = jacobi_solve(g.chol, one_hot, iterations, Direction.L).solution
        return jacobi_solve(g.chol, forward, iterations, Direction.L_TRANSPOSE).solution
    raise InvalidArgumentError(f"unknown covariance_row method '{method}'", details={"method": method})


def visualize_covariance_row(row: np.ndarray, clip: float = COVARIANCE_ROW_CLIP) -> np.ndarray:
    """Signed square root sign(v) * sqrt(|v|), clipped to [-clip, clip]."""
    row = np.asarray(row, dtype=np.float64)
    if not np.isfinite(row).all():
        raise InvalidArgumentError("covariance row must be finite")
    return np.clip(np.sign(row) * np.sqrt(np.abs(row)), -clip, clip)


def marginal_variance(g: StructuredGaussian, count: int = 256, seed: SeedLike = 0) -> np.ndarray:
    """
    Per-pixel variance diag(Sigma).

    Exact through ||L^-1 e_n||^2 for grids within GMRF_ORACLE_MAX_PIXELS,
    otherwise a Monte Carlo estimate from ``count`` exact draws.
    """
    if g.pixel_count <= settings.oracle_max_pixels:
        identity = np.eye(g.pixel_count).reshape((g.pixel_count,) + g.shape.yx)
        columns = solve_triangular(LinearOperatorView(g.chol, Direction.L), identity)
        return np.sum(columns**2, axis=(1, 2)).reshape(g.shape.yx)
    draws = sample(g, count, seed, exact=True)
    return draws.values.var(axis=0, ddof=1)


def apply_activation(bundle: SampleBundle, activation: Activation) -> SampleBundle:
    """Elementwise output transform of every map in the bundle."""
    return SampleBundle(bundle.shape, activation(bundle.values))
