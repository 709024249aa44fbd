"""
Conditional means and conditional samples given known pixel values.

Matheron's rule corrects a joint draw ``(a, b)`` with the innovation on the
known block. In precision form the gain is ``Sigma_UK Sigma_KK^-1 =
-Lambda_UU^-1 Lambda_UK``, so only sparse blocks of ``Lambda = L L^T`` and
SPD solves with ``Lambda_UU`` are needed.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from gridgauss.app.config.settings import settings
from gridgauss.app.core.distribution import StructuredGaussian, sample
from gridgauss.app.core.grid import CholeskyMaps, GridShape, SampleBundle, as_grid_array, assemble_sparse_cholesky
from gridgauss.app.exceptions import (
    ConvergenceError,
    DegenerateConditioningError,
    InvalidArgumentError,
    ShapeMismatchError,
)
from gridgauss.app.utils.rng import SeedLike, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Boolean H x W map, True where the pixel value is known."""

    shape: GridShape
    known: np.ndarray

    def __post_init__(self):
        known = np.asarray(self.known).astype(bool)
        if known.shape != self.shape.yx:
            raise ShapeMismatchError(self.shape.yx, known.shape, "mask")
        known = known.copy()
        known.flags.writeable = False
        object.__setattr__(self, "known", known)

    @classmethod
    def from_indices(cls, shape: GridShape, indices) -> "PixelMask":
        known = np.zeros(shape.pixel_count, dtype=bool)
        known[np.asarray(indices, dtype=int)] = True
        return cls(shape, known.reshape(shape.yx))

    @classmethod
    def random(cls, shape: GridShape, known_count: int, seed: SeedLike) -> "PixelMask":
        """``known_count`` distinct pixels drawn uniformly at random."""
        if not 0 <= known_count <= shape.pixel_count:
            raise InvalidArgumentError(
                f"known_count must lie in [0, {shape.pixel_count}]", details={"known_count": known_count}
            )
        chosen = make_rng(seed).choice(shape.pixel_count, size=known_count, replace=False)
        return cls.from_indices(shape, np.sort(chosen))

    @property
    def known_indices(self) -> np.ndarray:
        return np.flatnonzero(self.known.ravel())

    @property
    def unknown_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.known.ravel())

    @property
    def known_count(self) -> int:
        return int(np.count_nonzero(self.known))

    @property
    def unknown_count(self) -> int:
        return self.shape.pixel_count - self.known_count


@dataclass(frozen=True, eq=False)
class Conditioning:
    """Known-pixel mask plus the values alpha (read at known pixels only)."""

    mask: PixelMask
    values: np.ndarray

    def __post_init__(self):
        values = as_grid_array(self.values, self.mask.shape, "conditioning values").copy()
        if values.shape != self.mask.shape.yx:
            raise ShapeMismatchError(self.mask.shape.yx, values.shape, "conditioning values")
        if not np.isfinite(values[self.mask.known]).all():
            raise InvalidArgumentError("conditioning values must be finite at known pixels")
        values[~self.mask.known] = 0.0
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def known_values(self) -> np.ndarray:
        return self.values.ravel()[self.mask.known_indices]


@dataclass(frozen=True, eq=False)
class PrecisionBlocks:
    """Lambda partitioned into the unknown/unknown and unknown/known blocks."""

    precision: sparse.csr_matrix
    uu: sparse.csr_matrix
    uk: sparse.csr_matrix
    unknown: np.ndarray
    known: np.ndarray

    @property
    def bandwidth(self) -> int:
        coo = self.precision.tocoo()
        return int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0


@dataclass(frozen=True, eq=False)
class CGResult:
    """Outcome of a batched conjugate gradient solve."""

    solution: np.ndarray
    iterations: int
    residuals: np.ndarray
    converged: bool


def assemble_precision(maps: CholeskyMaps) -> sparse.csr_matrix:
    """Lambda = L L^T as a sparse banded CSR matrix (pattern-overlap nonzeros only)."""
    lower = assemble_sparse_cholesky(maps)
    precision = (lower @ lower.T).tocsr()
    precision.eliminate_zeros()
    precision.sort_indices()
    return precision


def assemble_precision_blocks(maps: CholeskyMaps, mask: PixelMask) -> PrecisionBlocks:
    """
    Sparse Lambda_UU and Lambda_UK for the given mask.

    Raises:
        DegenerateConditioningError: If every pixel is known
    """
    if mask.shape != maps.shape:
        raise ShapeMismatchError(maps.shape.yx, mask.shape.yx, "mask")
    unknown = mask.unknown_indices
    known = mask.known_indices
    if unknown.size == 0:
        raise DegenerateConditioningError()
    precision = assemble_precision(maps)
    rows = precision[unknown]
    return PrecisionBlocks(
        precision=precision,
        uu=rows[:, unknown].tocsr(),
        uk=rows[:, known].tocsr(),
        unknown=unknown,
        known=known,
    )


def conjugate_gradient(
    matvec: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    rtol: float,
    maxiter: int,
) -> CGResult:
    """
    Conjugate gradient for an SPD operator, batched over right-hand-side columns.

    Each column of ``rhs`` (n x k) runs its own CG recursion; a column stops
    updating once ``||r|| <= rtol * ||b||``.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    squeeze = rhs.ndim == 1
    if squeeze:
        rhs = rhs[:, None]

    solution = np.zeros_like(rhs)
    residual = rhs.copy()
    direction = residual.copy()
    rs = np.sum(residual * residual, axis=0)
    rhs_norm = np.sqrt(np.sum(rhs * rhs, axis=0))
    target = rtol * rhs_norm
    active = np.sqrt(rs) > target

    iterations = 0
    while active.any() and iterations < maxiter:
        iterations += 1
        product = matvec(direction)
        curvature = np.sum(direction * product, axis=0)
        alpha = np.divide(rs, curvature, out=np.zeros_like(rs), where=active & (curvature != 0))
        solution += alpha * direction
        residual -= alpha * product
        rs_new = np.sum(residual * residual, axis=0)
        beta = np.divide(rs_new, rs, out=np.zeros_like(rs), where=active & (rs != 0))
        direction = np.where(active, residual + beta * direction, direction)
        rs = np.where(active, rs_new, rs)
        active = np.sqrt(rs) > target

    relative = np.sqrt(rs) / np.where(rhs_norm > 0, rhs_norm, 1.0)
    if squeeze:
        solution = solution[:, 0]
    return CGResult(solution=solution, iterations=iterations, residuals=relative, converged=not active.any())


def _solve_unknown_block(
    blocks: PrecisionBlocks, rhs: np.ndarray, rtol: Optional[float], maxiter: Optional[int]
) -> np.ndarray:
    rtol = settings.cg_rtol if rtol is None else float(rtol)
    if rtol <= 0:
        raise InvalidArgumentError("CG tolerance must be positive", details={"rtol": rtol})
    maxiter = settings.cg_maxiter_factor * blocks.unknown.size if maxiter is None else int(maxiter)
    result = conjugate_gradient(blocks.uu.dot, rhs, rtol, maxiter)
    if not result.converged:
        worst = float(np.max(result.residuals))
        logger.error(
            f"Conjugate gradient stalled at residual {worst:.3e}",
            extra={"iterations": result.iterations, "residual": worst, "rtol": rtol},
        )
        raise ConvergenceError("conjugate gradient", result.iterations, worst, rtol)
    logger.debug(
        f"Conjugate gradient converged in {result.iterations} iterations",
        extra={"iterations": result.iterations, "columns": int(np.size(rhs) // max(1, blocks.unknown.size))},
    )
    return result.solution


def _check_conditioning(g: StructuredGaussian, cond: Conditioning) -> None:
    if cond.mask.shape != g.shape:
        raise ShapeMismatchError(g.shape.yx, cond.mask.shape.yx, "conditioning mask")


def conditional_mean(
    g: StructuredGaussian,
    cond: Conditioning,
    rtol: Optional[float] = None,
    maxiter: Optional[int] = None,
) -> np.ndarray:
    """
    Conditional mean map: alpha on known pixels, and on unknown pixels
    ``mu_U - Lambda_UU^-1 Lambda_UK (alpha - mu_K)``.

    Raises:
        ConvergenceError: If CG does not reach ``rtol`` within ``maxiter`` iterations
    """
    _check_conditioning(g, cond)
    mask = cond.mask
    if mask.known_count == 0:
        return np.array(g.mean)
    if mask.unknown_count == 0:
        return np.array(cond.values)

    blocks = assemble_precision_blocks(g.chol, mask)
    mean = g.mean.ravel()
    innovation = cond.known_values - mean[blocks.known]
    correction = _solve_unknown_block(blocks, blocks.uk @ innovation, rtol, maxiter)

    result = np.array(cond.values).ravel()
    result[blocks.unknown] = mean[blocks.unknown] - correction
    return result.reshape(g.shape.yx)


def conditional_sample(
    g: StructuredGaussian,
    cond: Conditioning,
    count: int,
    seed: SeedLike,
    iterations: Optional[int] = None,
    rtol: Optional[float] = None,
    maxiter: Optional[int] = None,
    exact: bool = False,
) -> SampleBundle:
    """
    Conditional draws by Matheron's rule in precision form.

    Draws joint samples ``(a, b)`` with ``sample(g, count, seed, iterations)``
    and returns ``b - Lambda_UU^-1 Lambda_UK (alpha - a)`` on unknown pixels
    and exactly alpha on known pixels. An empty known set returns the
    unconditional draws unchanged.
    """
    _check_conditioning(g, cond)
    mask = cond.mask
    joint = sample(g, count, seed, iterations, exact=exact)
    if mask.known_count == 0:
        return joint
    if mask.unknown_count == 0:
        return SampleBundle(g.shape, np.broadcast_to(cond.values, joint.values.shape))

    blocks = assemble_precision_blocks(g.chol, mask)
    draws = joint.flat()
    known_draws = draws[:, blocks.known]
    innovation = cond.known_values[:, None] - known_draws.T
    correction = _solve_unknown_block(blocks, blocks.uk @ innovation, rtol, maxiter)

    draws[:, blocks.unknown] -= correction.T
    draws[:, blocks.known] = cond.known_values
    return SampleBundle(g.shape, draws.reshape((joint.count,) + g.shape.yx))
