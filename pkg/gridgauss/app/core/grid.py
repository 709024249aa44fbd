"""
Grid geometry, raster ordering and the parameter maps of the Cholesky factor.

Pixels are enumerated in row-major raster order, ``k = y * width + x``.
Row ``k`` of the lower-triangular factor L holds the diagonal entry of pixel
``k`` plus one entry per pattern offset, pointing at the *preceding*
neighbour ``(y + dy, x + dx)``. Offsets whose neighbour falls outside the
grid are dropped (no wrapping, no reflection).
"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from gridgauss.app.exceptions import InvalidArgumentError, ShapeMismatchError

logger = logging.getLogger(__name__)

Offset = Tuple[int, int]
SliceYX = Tuple[slice, slice]


def _freeze(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class GridShape:
    """Height and width of a pixel grid."""

    height: int
    width: int

    def __post_init__(self):
        for name in ("height", "width"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer", details={name: value})
            object.__setattr__(self, name, int(value))

    @property
    def pixel_count(self) -> int:
        return self.height * self.width

    @property
    def yx(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def raster_index(self, y: int, x: int) -> int:
        if not (0 <= y < self.height and 0 <= x < self.width):
            raise InvalidArgumentError(
                f"Pixel ({y}, {x}) outside {self.height}x{self.width} grid", details={"y": y, "x": x}
            )
        return y * self.width + x

    def coordinates(self, index: int) -> Tuple[int, int]:
        if not 0 <= index < self.pixel_count:
            raise InvalidArgumentError(
                f"Pixel index {index} out of range [0, {self.pixel_count})", details={"index": index}
            )
        y, x = divmod(int(index), self.width)
        return y, x

    @classmethod
    def parse(cls, text: str) -> "GridShape":
        """Parse ``"HxW"`` (e.g. ``"64x32"``)."""
        try:
            height, width = (int(part) for part in text.lower().split("x"))
        except ValueError:
            raise InvalidArgumentError(f"Invalid grid size '{text}', expected HxW", details={"value": text})
        return cls(height, width)

    def __str__(self) -> str:
        return f"{self.height}x{self.width}"


@dataclass(frozen=True)
class SparsityPattern:
    """Lower-triangular neighbour offsets defining which Cholesky entries exist."""

    radius: int
    offsets: Tuple[Offset, ...]

    def __post_init__(self):
        if self.radius < 1:
            raise InvalidArgumentError("radius must be >= 1", details={"radius": self.radius})
        offsets = tuple((int(dy), int(dx)) for dy, dx in self.offsets)
        if len(set(offsets)) != len(offsets):
            raise InvalidArgumentError("pattern offsets must be distinct")
        for dy, dx in offsets:
            if not (dy < 0 or (dy == 0 and dx < 0)):
                raise InvalidArgumentError(
                    f"offset ({dy}, {dx}) does not precede the centre pixel in raster order",
                    details={"offset": [dy, dx]},
                )
            if abs(dy) > self.radius or abs(dx) > self.radius:
                raise InvalidArgumentError(
                    f"offset ({dy}, {dx}) lies outside radius {self.radius}", details={"offset": [dy, dx]}
                )
        object.__setattr__(self, "offsets", offsets)

    @property
    def size(self) -> int:
        return len(self.offsets)

    def __len__(self) -> int:
        return len(self.offsets)

    def __iter__(self) -> Iterator[Offset]:
        return iter(self.offsets)

    def neighbor_mask(self, shape: GridShape) -> np.ndarray:
        """Boolean L x H x W map, True where the offset neighbour lies inside the grid."""
        mask = np.zeros((self.size,) + shape.yx, dtype=bool)
        for index, offset in enumerate(self.offsets):
            slices = offset_slices(shape, offset)
            if slices is not None:
                mask[(index,) + slices[0]] = True
        return mask


@lru_cache(maxsize=None)
def canonical_pattern(radius: int) -> SparsityPattern:
    """
    Lower-triangular offsets of the (2r+1) x (2r+1) neighbourhood.

    Offsets are listed in row-major scan order of the neighbourhood and keep
    only those strictly preceding the centre, ((2r+1)^2 - 1) / 2 in total.
    """
    if isinstance(radius, bool) or not isinstance(radius, (int, np.integer)) or radius < 1:
        raise InvalidArgumentError("radius must be a positive integer", details={"radius": radius})
    radius = int(radius)
    offsets = [(dy, dx) for dy in range(-radius, 1) for dx in range(-radius, radius + 1) if dy < 0 or dx < 0]
    return SparsityPattern(radius=radius, offsets=tuple(offsets))


def offset_slices(shape: GridShape, offset: Offset) -> Optional[Tuple[SliceYX, SliceYX]]:
    """
    Slices selecting pixels whose offset neighbour is inside the grid.

    Returns ``(pixel_slices, neighbor_slices)`` such that
    ``grid[pixel_slices]`` and ``grid[neighbor_slices]`` are aligned views of
    each pixel and its neighbour, or None when no pixel has an in-grid neighbour.
    """
    dy, dx = offset
    height, width = shape.yx
    if abs(dy) >= height or abs(dx) >= width:
        return None
    pixel = (slice(max(0, -dy), height - max(0, dy)), slice(max(0, -dx), width - max(0, dx)))
    neighbor = (slice(max(0, dy), height - max(0, -dy)), slice(max(0, dx), width - max(0, -dx)))
    return pixel, neighbor


def as_grid_array(values: Any, shape: GridShape, what: str = "map") -> np.ndarray:
    """Upcast to float64 and check that the trailing two axes match the grid."""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim < 2 or array.shape[-2:] != shape.yx:
        raise ShapeMismatchError(shape.yx, array.shape, what)
    return array


@dataclass(frozen=True, eq=False)
class CholeskyMaps:
    """
    Per-pixel maps encoding the sparse Cholesky factor L of the precision.

    The effective diagonal is ``exp(log_diag + a) + exp(b)``; ``b = -inf``
    disables the additive term. With ``scaled`` the effective off-diagonals
    are ``tanh(off_diag) * c`` per offset map, otherwise ``off_diag`` directly.
    """

    shape: GridShape
    pattern: SparsityPattern
    log_diag: np.ndarray
    off_diag: np.ndarray
    diag_scale_a: float = 0.0
    diag_scale_b: float = -math.inf
    off_diag_scale_c: Optional[np.ndarray] = None
    scaled: bool = False

    def __post_init__(self):
        log_diag = as_grid_array(self.log_diag, self.shape, "log_diag").copy()
        if log_diag.shape != self.shape.yx:
            raise ShapeMismatchError(self.shape.yx, log_diag.shape, "log_diag")
        off_diag = np.asarray(self.off_diag, dtype=np.float64).copy()
        expected = (self.pattern.size,) + self.shape.yx
        if off_diag.shape != expected:
            raise ShapeMismatchError(expected, off_diag.shape, "off_diag")
        if self.off_diag_scale_c is None:
            scale_c = np.ones(self.pattern.size)
        else:
            scale_c = np.asarray(self.off_diag_scale_c, dtype=np.float64).copy().reshape(-1)
        if scale_c.shape != (self.pattern.size,):
            raise ShapeMismatchError((self.pattern.size,), scale_c.shape, "off_diag_scale_c")

        a = float(self.diag_scale_a)
        b = float(self.diag_scale_b)
        if not (np.isfinite(log_diag).all() and np.isfinite(off_diag).all() and np.isfinite(scale_c).all()):
            raise InvalidArgumentError("Cholesky parameter maps must be finite")
        if not math.isfinite(a) or math.isnan(b) or b == math.inf:
            raise InvalidArgumentError(
                "diagonal scales must be finite (b may be -inf to disable)", details={"a": a, "b": b}
            )

        object.__setattr__(self, "log_diag", _freeze(log_diag))
        object.__setattr__(self, "off_diag", _freeze(off_diag))
        object.__setattr__(self, "off_diag_scale_c", _freeze(scale_c))
        object.__setattr__(self, "diag_scale_a", a)
        object.__setattr__(self, "diag_scale_b", b)
        object.__setattr__(self, "scaled", bool(self.scaled))

    @classmethod
    def identity(cls, shape: GridShape, pattern: SparsityPattern, scaled: bool = False) -> "CholeskyMaps":
        """L = I: zero log-diagonal, zero off-diagonals, a = 0, b disabled, c = 1."""
        return cls(
            shape=shape,
            pattern=pattern,
            log_diag=np.zeros(shape.yx),
            off_diag=np.zeros((pattern.size,) + shape.yx),
            scaled=scaled,
        )

    @property
    def diag_offset_enabled(self) -> bool:
        return math.isfinite(self.diag_scale_b)

    def with_params(self, **changes: Any) -> "CholeskyMaps":
        """Copy with some fields replaced."""
        return replace(self, **changes)


def effective_diagonal(maps: CholeskyMaps) -> np.ndarray:
    """exp(log_diag) * exp(a) + exp(b), elementwise; strictly positive."""
    with np.errstate(over="raise"):
        try:
            diag = np.exp(maps.log_diag + maps.diag_scale_a) + math.exp(maps.diag_scale_b)
        except FloatingPointError:
            raise InvalidArgumentError("effective diagonal overflows float64")
    return diag


def log_effective_diagonal(maps: CholeskyMaps) -> np.ndarray:
    """ln of the effective diagonal via log-sum-exp of (log_diag + a) and b."""
    return np.logaddexp(maps.log_diag + maps.diag_scale_a, maps.diag_scale_b)


def effective_off_diagonal(maps: CholeskyMaps, scaled: Optional[bool] = None) -> np.ndarray:
    """
    Effective off-diagonal maps, L x H x W.

    Entries whose neighbour falls outside the grid are returned as exact zeros.
    """
    use_scaling = maps.scaled if scaled is None else scaled
    if use_scaling:
        values = np.tanh(maps.off_diag) * maps.off_diag_scale_c[:, None, None]
    else:
        values = np.array(maps.off_diag)
    values[~maps.pattern.neighbor_mask(maps.shape)] = 0.0
    return values


def assemble_sparse_cholesky(maps: CholeskyMaps) -> sparse.csr_matrix:
    """Materialise L as an N x N CSR matrix in raster order."""
    shape = maps.shape
    count = shape.pixel_count
    index = np.arange(count).reshape(shape.yx)
    diag = effective_diagonal(maps)
    off = effective_off_diagonal(maps)

    rows = [index.ravel()]
    cols = [index.ravel()]
    data = [diag.ravel()]
    for l, offset in enumerate(maps.pattern.offsets):
        slices = offset_slices(shape, offset)
        if slices is None:
            continue
        pixel, neighbor = slices
        rows.append(index[pixel].ravel())
        cols.append(index[neighbor].ravel())
        data.append(off[l][pixel].ravel())

    matrix = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(count, count)
    )
    return matrix.tocsr()


@dataclass(frozen=True, eq=False)
class SampleBundle:
    """S grid-shaped maps sharing one shape (ensemble members or draws)."""

    shape: GridShape
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = as_grid_array(self.values, self.shape, "bundle").copy()
        if values.ndim == 2:
            values = values[None]
        if values.ndim != 3 or values.shape[0] < 1:
            raise InvalidArgumentError("bundle must hold S >= 1 maps of shape H x W", details={"ndim": values.ndim})
        if not np.isfinite(values).all():
            raise InvalidArgumentError("bundle values must be finite")
        object.__setattr__(self, "values", _freeze(values))

    @classmethod
    def from_array(cls, values: Any) -> "SampleBundle":
        array = np.asarray(values, dtype=np.float64)
        if array.ndim not in (2, 3):
            raise InvalidArgumentError("bundle array must be H x W or S x H x W", details={"ndim": array.ndim})
        return cls(GridShape(array.shape[-2], array.shape[-1]), array)

    @classmethod
    def stack(cls, bundles: Sequence["SampleBundle"]) -> "SampleBundle":
        """Concatenate bundles that share one grid."""
        if not bundles:
            raise InvalidArgumentError("nothing to stack")
        shape = bundles[0].shape
        for bundle in bundles[1:]:
            if bundle.shape != shape:
                raise ShapeMismatchError(shape.yx, bundle.shape.yx, "bundle")
        return cls(shape, np.concatenate([bundle.values for bundle in bundles], axis=0))

    @property
    def count(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.count

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def flat(self) -> np.ndarray:
        """S x N raster-flattened copy."""
        return self.values.reshape(self.count, -1).copy()

    def subset(self, indices: Any) -> "SampleBundle":
        return SampleBundle(self.shape, self.values[np.asarray(indices)])
