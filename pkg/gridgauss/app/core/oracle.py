"""
Dense brute-force reference for small grids.

Every sparse-path operation has a twin here built from explicit N x N
matrices with textbook O(N^3) algorithms. Used by the test-suite and the
``oracle-check`` command to cross-check the matrix-free code.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple, Union

import numpy as np
import scipy.linalg

from gridgauss.app.config.settings import settings
from gridgauss.app.core.conditioning import Conditioning, PixelMask, conditional_mean
from gridgauss.app.core.distribution import LOG_2PI, StructuredGaussian, covariance_row, log_density
from gridgauss.app.core.grid import (
    CholeskyMaps,
    GridShape,
    SampleBundle,
    as_grid_array,
    effective_diagonal,
    effective_off_diagonal,
)
from gridgauss.app.core.linops import Direction, LinearOperatorView, apply, jacobi_solve, solve_triangular
from gridgauss.app.core.synth import random_structured_gaussian
from gridgauss.app.exceptions import CapacityError, InvalidArgumentError, NumericalDomainError, ShapeMismatchError
from gridgauss.app.schemas.evaluation import OracleCheckCase, OracleCheckReport
from gridgauss.app.utils.rng import SeedLike, make_rng, spawn_seeds, standard_normal

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class DenseGaussian:
    """Explicit mean vector, L, Lambda = L L^T and Sigma = Lambda^-1."""

    mean: np.ndarray
    cholesky_precision: np.ndarray
    precision: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True, eq=False)
class DenseConditional:
    """Conditional mean map (alpha on known pixels) and Sigma_U|K."""

    mean: np.ndarray
    covariance: np.ndarray
    gain: np.ndarray


def _check_capacity(shape: GridShape) -> None:
    if shape.pixel_count > settings.oracle_max_pixels:
        raise CapacityError("dense oracle grid", shape.pixel_count, settings.oracle_max_pixels)


def dense_cholesky(maps: CholeskyMaps) -> np.ndarray:
    """L filled entry by entry from the maps; out-of-grid neighbours stay zero."""
    shape = maps.shape
    _check_capacity(shape)
    diag = effective_diagonal(maps)
    off = effective_off_diagonal(maps)
    lower = np.zeros((shape.pixel_count, shape.pixel_count))
    for y in range(shape.height):
        for x in range(shape.width):
            row = shape.raster_index(y, x)
            lower[row, row] = diag[y, x]
            for l, (dy, dx) in enumerate(maps.pattern.offsets):
                ny, nx = y + dy, x + dx
                if 0 <= ny < shape.height and 0 <= nx < shape.width:
                    lower[row, shape.raster_index(ny, nx)] = off[l, y, x]
    return lower


def assemble_dense(g: StructuredGaussian) -> DenseGaussian:
    """
    Materialise L, Lambda and Sigma.

    Raises:
        CapacityError: If N exceeds GMRF_ORACLE_MAX_PIXELS
    """
    lower = dense_cholesky(g.chol)
    precision = lower @ lower.T
    inverse_lower = scipy.linalg.solve_triangular(lower, np.eye(g.pixel_count), lower=True)
    covariance = inverse_lower.T @ inverse_lower
    covariance = 0.5 * (covariance + covariance.T)
    return DenseGaussian(
        mean=g.mean.ravel().copy(),
        cholesky_precision=lower,
        precision=precision,
        covariance=covariance,
    )


def _cholesky(matrix: np.ndarray, what: str) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(matrix, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalDomainError(f"{what} is not positive definite after round-off", details={"matrix": what})


def dense_apply(
    g: StructuredGaussian, x: np.ndarray, direction: Union[Direction, str] = Direction.LAMBDA
) -> np.ndarray:
    """Dense twin of ``linops.apply``."""
    dense = assemble_dense(g)
    x = as_grid_array(x, g.shape, "operand")
    matrix = {
        Direction.L: dense.cholesky_precision,
        Direction.L_TRANSPOSE: dense.cholesky_precision.T,
        Direction.LAMBDA: dense.precision,
    }[Direction(direction)]
    flat = x.reshape(-1, g.pixel_count)
    return (flat @ matrix.T).reshape(x.shape)


def dense_log_density(g: StructuredGaussian, d: np.ndarray, dense: Optional[DenseGaussian] = None) -> float:
    """log N(d; mu, Lambda^-1) through a fresh dense Cholesky of Lambda."""
    dense = dense or assemble_dense(g)
    d = as_grid_array(d, g.shape, "map")
    if d.shape != g.shape.yx:
        raise ShapeMismatchError(g.shape.yx, d.shape, "map")
    factor = _cholesky(dense.precision, "precision")
    residual = d.ravel() - dense.mean
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor))))
    quadratic = float(residual @ dense.precision @ residual)
    return -0.5 * g.pixel_count * LOG_2PI + 0.5 * log_det - 0.5 * quadratic


def dense_nll(g: StructuredGaussian, bundle: SampleBundle) -> float:
    dense = assemble_dense(g)
    return -sum(dense_log_density(g, values, dense) for values in bundle.values)


def dense_sample(g: StructuredGaussian, count: int, seed: SeedLike) -> SampleBundle:
    """mu + chol(Sigma) eps with eps drawn exactly as ``distribution.sample`` draws it."""
    if count < 1:
        raise InvalidArgumentError("sample count must be >= 1", details={"count": count})
    dense = assemble_dense(g)
    noise = standard_normal(seed, (int(count),) + g.shape.yx).reshape(count, -1)
    root = _cholesky(dense.covariance, "covariance")
    draws = dense.mean + noise @ root.T
    return SampleBundle(g.shape, draws.reshape((count,) + g.shape.yx))


def dense_covariance_row(g: StructuredGaussian, pixel: int) -> np.ndarray:
    dense = assemble_dense(g)
    return dense.covariance[int(pixel)].reshape(g.shape.yx)


def dense_precision_blocks(g: StructuredGaussian, mask: PixelMask) -> Tuple[np.ndarray, np.ndarray]:
    """Dense Lambda_UU and Lambda_UK."""
    dense = assemble_dense(g)
    unknown, known = mask.unknown_indices, mask.known_indices
    return dense.precision[np.ix_(unknown, unknown)], dense.precision[np.ix_(unknown, known)]


def dense_conditional(g: StructuredGaussian, cond: Conditioning) -> DenseConditional:
    """
    Covariance-block conditional:

        b = mu_U + Sigma_UK Sigma_KK^-1 (alpha - mu_K)
        B = Sigma_UU - Sigma_UK Sigma_KK^-1 Sigma_KU
    """
    dense = assemble_dense(g)
    unknown, known = cond.mask.unknown_indices, cond.mask.known_indices
    sigma = dense.covariance
    sigma_uu = sigma[np.ix_(unknown, unknown)]
    sigma_uk = sigma[np.ix_(unknown, known)]
    sigma_kk = sigma[np.ix_(known, known)]

    if known.size == 0:
        return DenseConditional(g.mean.copy(), sigma_uu, np.zeros((unknown.size, 0)))
    factor = scipy.linalg.cho_factor(sigma_kk, lower=True)
    gain = scipy.linalg.cho_solve(factor, sigma_uk.T).T
    mean = dense.mean.copy()
    mean[known] = cond.known_values
    mean[unknown] = dense.mean[unknown] + gain @ (cond.known_values - dense.mean[known])
    covariance = sigma_uu - gain @ sigma_uk.T
    return DenseConditional(mean.reshape(g.shape.yx), 0.5 * (covariance + covariance.T), gain)


def _relative_error(actual, expected) -> float:
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    scale = float(np.linalg.norm(expected))
    return float(np.linalg.norm(actual - expected)) / (scale if scale > 0 else 1.0)


def cross_check(
    seed: int, max_shape: GridShape = GridShape(8, 8), tolerance: float = DEFAULT_TOLERANCE
) -> OracleCheckCase:
    """
    One randomized sparse-versus-dense comparison.

    Draws a grid between 4x4 and ``max_shape``, a radius of 1 or 2, with or
    without the scaled parameterisation, and a random known-pixel mask, then
    records the relative error of every sparse operation against its twin.
    """
    rng = make_rng(seed)
    height = int(rng.integers(min(4, max_shape.height), max_shape.height + 1))
    width = int(rng.integers(min(4, max_shape.width), max_shape.width + 1))
    shape = GridShape(height, width)
    radius = int(rng.integers(1, 3))
    scaled = bool(rng.integers(0, 2))
    model_seed, mask_seed = spawn_seeds(seed, 2)
    g = random_structured_gaussian(shape, radius, model_seed, scaled=scaled)
    dense = assemble_dense(g)

    probe = g.mean + rng.standard_normal(shape.yx)
    pixel = int(rng.integers(shape.pixel_count))
    known_count = int(rng.integers(1, shape.pixel_count))
    mask = PixelMask.random(shape, known_count, mask_seed)
    cond = Conditioning(mask, probe)

    lambda_uu, lambda_uk = dense_precision_blocks(g, mask)
    precision_gain = -np.linalg.solve(lambda_uu, lambda_uk)
    reference = dense_conditional(g, cond)
    jacobi = jacobi_solve(g.chol, probe, shape.pixel_count, Direction.L_TRANSPOSE).solution
    exact = solve_triangular(LinearOperatorView(g.chol, Direction.L_TRANSPOSE), probe)

    reference_density = dense_log_density(g, probe, dense)
    sparse_lambda = apply(LinearOperatorView(g.chol, Direction.LAMBDA), probe)

    errors = {
        "log_density": abs(log_density(g, probe) - reference_density) / max(1.0, abs(reference_density)),
        "apply_lambda": _relative_error(sparse_lambda, (dense.precision @ probe.ravel()).reshape(shape.yx)),
        "covariance_row": _relative_error(covariance_row(g, pixel), dense.covariance[pixel].reshape(shape.yx)),
        "conditional_mean": _relative_error(conditional_mean(g, cond, rtol=1e-12), reference.mean),
        "matheron_gain": _relative_error(precision_gain, reference.gain),
        "jacobi_exact": _relative_error(jacobi, exact),
    }
    passed = all(math.isfinite(value) and value <= tolerance for value in errors.values())
    if not passed:
        logger.warning(
            f"Oracle cross-check failed for seed {seed}",
            extra={"seed": seed, "grid": str(shape), "radius": radius, "errors": errors},
        )
    return OracleCheckCase(
        seed=int(seed),
        height=height,
        width=width,
        radius=radius,
        scaled=scaled,
        known_pixels=known_count,
        errors=errors,
        passed=passed,
    )


def run_cross_checks(
    seeds: Union[int, Iterable[int]],
    max_shape: GridShape = GridShape(8, 8),
    tolerance: float = DEFAULT_TOLERANCE,
) -> OracleCheckReport:
    """Run ``cross_check`` over seeds 0..K-1 (or the given seeds) and aggregate."""
    seed_list = list(range(seeds)) if isinstance(seeds, int) else [int(seed) for seed in seeds]
    if not seed_list:
        raise InvalidArgumentError("at least one seed is required")
    _check_capacity(max_shape)

    started = time.perf_counter()
    cases = [cross_check(seed, max_shape, tolerance) for seed in seed_list]
    elapsed = time.perf_counter() - started
    failures = sum(1 for case in cases if not case.passed)
    logger.info(
        f"Oracle cross-checks: {len(cases) - failures}/{len(cases)} passed",
        extra={"failures": failures, "elapsed_seconds": elapsed},
    )
    return OracleCheckReport(
        tolerance=tolerance,
        cases=cases,
        passed=failures == 0,
        failures=failures,
        elapsed_seconds=elapsed,
    )
