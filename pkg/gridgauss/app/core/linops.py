"""
Matrix-free application of L, L^T and the precision L L^T to grid maps,
exact triangular solves, and the truncated Jacobi solver.

All operators accept a batch of maps with shape ``(..., H, W)`` and work on
every leading index at once.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, spsolve_triangular

from gridgauss.app.config.settings import settings
from gridgauss.app.core.grid import (
    CholeskyMaps,
    SampleBundle,
    as_grid_array,
    assemble_sparse_cholesky,
    effective_diagonal,
    effective_off_diagonal,
    offset_slices,
)
from gridgauss.app.exceptions import InvalidArgumentError, NumericalDomainError

logger = logging.getLogger(__name__)


class Direction(str, Enum):
    L = "L"
    L_TRANSPOSE = "L_transpose"
    LAMBDA = "Lambda"


@dataclass(frozen=True, eq=False)
class LinearOperatorView:
    """One of L, L^T or Lambda = L L^T, backed by shared Cholesky maps."""

    maps: CholeskyMaps
    direction: Direction = Direction.L

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))

    @property
    def transpose(self) -> "LinearOperatorView":
        swapped = {
            Direction.L: Direction.L_TRANSPOSE,
            Direction.L_TRANSPOSE: Direction.L,
            Direction.LAMBDA: Direction.LAMBDA,
        }
        return LinearOperatorView(self.maps, swapped[self.direction])

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return apply(self, x)

    def as_scipy_operator(self) -> LinearOperator:
        """Wrap as a ``scipy.sparse.linalg.LinearOperator`` on raster-flattened vectors."""
        shape = self.maps.shape
        count = shape.pixel_count

        def matvec(vector: np.ndarray) -> np.ndarray:
            return apply(self, np.asarray(vector).reshape(shape.yx)).ravel()

        def rmatvec(vector: np.ndarray) -> np.ndarray:
            return apply(self.transpose, np.asarray(vector).reshape(shape.yx)).ravel()

        return LinearOperator((count, count), matvec=matvec, rmatvec=rmatvec, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class JacobiResult:
    """Outcome of a truncated Jacobi solve."""

    solution: np.ndarray
    iterations: int
    residual: float
    converged_exactly: bool


def strictly_lower_product(maps: CholeskyMaps, off: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(L - D) x: each pixel gathers its preceding neighbours."""
    out = np.zeros_like(x)
    for l, offset in enumerate(maps.pattern.offsets):
        slices = offset_slices(maps.shape, offset)
        if slices is None:
            continue
        pixel, neighbor = slices
        out[(Ellipsis,) + pixel] += off[l][pixel] * x[(Ellipsis,) + neighbor]
    return out


def strictly_upper_product(maps: CholeskyMaps, off: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(L^T - D) x: each pixel scatters into its preceding neighbours."""
    out = np.zeros_like(x)
    for l, offset in enumerate(maps.pattern.offsets):
        slices = offset_slices(maps.shape, offset)
        if slices is None:
            continue
        pixel, neighbor = slices
        out[(Ellipsis,) + neighbor] += off[l][pixel] * x[(Ellipsis,) + pixel]
    return out


def _factors(maps: CholeskyMaps) -> Tuple[np.ndarray, np.ndarray]:
    return effective_diagonal(maps), effective_off_diagonal(maps)


def apply(op: LinearOperatorView, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product of the selected matrix with raster-flattened ``x``, reshaped to the grid."""
    maps = op.maps
    x = as_grid_array(x, maps.shape, "operand")
    diag, off = _factors(maps)
    if op.direction is Direction.L:
        return diag * x + strictly_lower_product(maps, off, x)
    if op.direction is Direction.L_TRANSPOSE:
        return diag * x + strictly_upper_product(maps, off, x)
    lt_x = diag * x + strictly_upper_product(maps, off, x)
    return diag * lt_x + strictly_lower_product(maps, off, lt_x)


def _check_positive_diagonal(maps: CholeskyMaps) -> np.ndarray:
    diag = effective_diagonal(maps)
    if not (diag > 0).all():
        bad = int(np.count_nonzero(~(diag > 0)))
        raise NumericalDomainError(
            f"Effective diagonal has {bad} non-positive entries", details={"non_positive_entries": bad}
        )
    return diag


def solve_triangular(op: LinearOperatorView, b: np.ndarray) -> np.ndarray:
    """
    Exact forward (L) or back (L^T) substitution in raster order.

    Args:
        op: Operator view with direction L or L_transpose
        b: Right-hand side map(s), shape (..., H, W)

    Returns:
        Solution with the same shape as ``b``

    Raises:
        InvalidArgumentError: If the direction is Lambda
        NumericalDomainError: If the effective diagonal is not strictly positive
    """
    if op.direction is Direction.LAMBDA:
        raise InvalidArgumentError("solve_triangular needs direction L or L_transpose")
    maps = op.maps
    b = as_grid_array(b, maps.shape, "right-hand side")
    _check_positive_diagonal(maps)

    count = maps.shape.pixel_count
    batch_shape = b.shape[:-2]
    rhs = b.reshape(-1, count).T
    lower = assemble_sparse_cholesky(maps)
    if op.direction is Direction.L:
        solution = spsolve_triangular(lower, rhs, lower=True)
    else:
        solution = spsolve_triangular(lower.T.tocsr(), rhs, lower=False)
    solution = np.asarray(solution).reshape(count, -1)
    return solution.T.reshape(batch_shape + maps.shape.yx)


def jacobi_residual(maps: CholeskyMaps, solution: np.ndarray, rhs: np.ndarray, direction: Direction) -> float:
    """Relative residual ||A S - E|| / ||E|| for A = L or L^T."""
    product = apply(LinearOperatorView(maps, direction), solution)
    scale = float(np.linalg.norm(rhs))
    return float(np.linalg.norm(product - rhs)) / (scale if scale > 0 else 1.0)


def _jacobi_block(
    maps: CholeskyMaps,
    diag: np.ndarray,
    off: np.ndarray,
    rhs: np.ndarray,
    iterations: int,
    direction: Direction,
    tolerance: Optional[float],
) -> Tuple[np.ndarray, int, bool]:
    strict = strictly_upper_product if direction is Direction.L_TRANSPOSE else strictly_lower_product
    inverse_diag = 1.0 / diag
    rhs_norm = float(np.linalg.norm(rhs)) or 1.0
    current = rhs.copy()
    for iteration in range(1, iterations + 1):
        updated = inverse_diag * (rhs - strict(maps, off, current))
        # The iteration matrix is nilpotent; once a sweep changes nothing it never will again.
        if np.array_equal(updated, current):
            return updated, iteration, True
        if tolerance is not None:
            step = float(np.linalg.norm(diag * (updated - current))) / rhs_norm
            if step <= tolerance:
                return updated, iteration, False
        current = updated
    return current, iterations, False


def jacobi_solve(
    maps: CholeskyMaps,
    rhs: np.ndarray,
    iterations: Optional[int] = None,
    direction: Union[Direction, str] = Direction.L_TRANSPOSE,
    tolerance: Optional[float] = None,
) -> JacobiResult:
    """
    Truncated Jacobi solve of ``A S = E`` for A = L or L^T.

    Starts from ``S = E`` and repeats ``S <- D^-1 (E - U S)`` against the
    original right-hand side, with U the strictly triangular part of A. All
    maps in the leading batch axes are updated together; with several worker
    threads the batch is split into independent column blocks. Without a
    ``tolerance`` every block runs the same iterations and the result is
    bitwise the same as a single pass. With one, each block stops on its own
    residual, so the iteration count and solution can depend on the split.

    Args:
        maps: Cholesky maps defining L
        rhs: Right-hand side E, shape (..., H, W)
        iterations: Iteration count J (defaults to GMRF_JACOBI_ITERATIONS)
        direction: L or L_transpose
        tolerance: Optional relative residual threshold for stopping early

    Returns:
        JacobiResult with the approximate solution S^(J)
    """
    direction = Direction(direction)
    if direction is Direction.LAMBDA:
        raise InvalidArgumentError("Jacobi solves need direction L or L_transpose")
    iterations = settings.jacobi_iterations if iterations is None else int(iterations)
    if iterations < 1:
        raise InvalidArgumentError("Jacobi iterations must be >= 1", details={"iterations": iterations})
    if tolerance is not None and tolerance <= 0:
        raise InvalidArgumentError("Jacobi tolerance must be positive", details={"tolerance": tolerance})

    rhs = as_grid_array(rhs, maps.shape, "right-hand side")
    diag = _check_positive_diagonal(maps)
    off = effective_off_diagonal(maps)

    batch_shape = rhs.shape[:-2]
    flat = rhs.reshape((-1,) + maps.shape.yx)
    workers = min(settings.worker_count, flat.shape[0])

    if workers <= 1:
        solution, used, exact = _jacobi_block(maps, diag, off, flat, iterations, direction, tolerance)
    else:
        blocks = np.array_split(flat, workers, axis=0)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(
                    lambda block: _jacobi_block(maps, diag, off, block, iterations, direction, tolerance), blocks
                )
            )
        solution = np.concatenate([result[0] for result in results], axis=0)
        used = max(result[1] for result in results)
        exact = all(result[2] for result in results)

    solution = solution.reshape(batch_shape + maps.shape.yx)
    residual = jacobi_residual(maps, solution, rhs, direction)
    logger.debug(
        f"Jacobi solve finished after {used} iterations",
        extra={"direction": direction.value, "iterations": used, "residual": residual, "exact": exact},
    )
    return JacobiResult(solution=solution, iterations=used, residual=residual, converged_exactly=exact)


def jacobi_solve_Lt(maps: CholeskyMaps, noise: SampleBundle, iterations: Optional[int] = None) -> SampleBundle:
    """S^(J) approximating L^-T E for every map of the bundle."""
    result = jacobi_solve(maps, noise.values, iterations, Direction.L_TRANSPOSE)
    return SampleBundle(noise.shape, result.solution)
