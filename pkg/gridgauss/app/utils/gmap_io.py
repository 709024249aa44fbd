"""
Readers and writers for grid maps, sample bundles, masks and model files.

GMAP layout (little-endian):

    magic     4 bytes  b"GMAP"
    version   u16      1
    dtype     u16      1 = f32, 2 = f64, 3 = u8
    height    u32
    width     u32
    channels  u32
    payload   channels x height x width values, channel-major, row-major

CSV holds a single H x W map, one grid row per line, for grids up to
GMRF_CSV_MAX_PIXELS pixels.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from pydantic import ValidationError

from gridgauss.app.config.settings import settings
from gridgauss.app.core.conditioning import PixelMask
from gridgauss.app.core.distribution import StructuredGaussian
from gridgauss.app.core.grid import CholeskyMaps, GridShape, SampleBundle, canonical_pattern
from gridgauss.app.exceptions import CapacityError, GridFormatError, InvalidArgumentError
from gridgauss.app.schemas.model import ModelSidecar

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

GMAP_MAGIC = b"GMAP"
GMAP_VERSION = 1
HEADER = struct.Struct("<4sHHIII")
DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
PRECISION_TAGS = {"f32": 1, "f64": 2, "u8": 3}

MEAN_SUFFIX = ".mean.gmap"
CHOL_SUFFIX = ".chol.gmap"
SIDECAR_SUFFIX = ".json"


def _as_channels(values: np.ndarray) -> np.ndarray:
    array = np.asarray(values)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3 or 0 in array.shape:
        raise InvalidArgumentError("grid data must be H x W or C x H x W", details={"shape": list(array.shape)})
    return array


def write_gmap(path: PathLike, values: np.ndarray, precision: str = "f64") -> Path:
    """Write a C x H x W (or H x W) array as GMAP."""
    if precision not in PRECISION_TAGS:
        raise InvalidArgumentError(f"unknown precision '{precision}'", details={"precision": precision})
    array = _as_channels(values)
    tag = PRECISION_TAGS[precision]
    if tag != 3 and not np.isfinite(array).all():
        raise InvalidArgumentError("grid values must be finite")
    channels, height, width = array.shape
    path = Path(path)
    with path.open("wb") as handle:
        handle.write(HEADER.pack(GMAP_MAGIC, GMAP_VERSION, tag, height, width, channels))
        handle.write(np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes())
    logger.debug(f"Wrote {path}", extra={"path": str(path), "channels": channels, "precision": precision})
    return path


def read_gmap(path: PathLike) -> np.ndarray:
    """Read a GMAP file into a float64 C x H x W array (u8 payloads keep their integer values)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise GridFormatError(path, f"unreadable ({exc.strerror})")
    if len(data) < HEADER.size:
        raise GridFormatError(path, "truncated header")
    magic, version, tag, height, width, channels = HEADER.unpack_from(data)
    if magic != GMAP_MAGIC:
        raise GridFormatError(path, "bad magic")
    if version != GMAP_VERSION:
        raise GridFormatError(path, f"unsupported version {version}")
    if tag not in DTYPE_TAGS:
        raise GridFormatError(path, f"unknown dtype tag {tag}")
    if min(height, width, channels) < 1:
        raise GridFormatError(path, "empty grid")
    dtype = DTYPE_TAGS[tag]
    expected = channels * height * width * dtype.itemsize
    payload = data[HEADER.size :]
    if len(payload) != expected:
        raise GridFormatError(path, f"payload has {len(payload)} bytes, expected {expected}")
    array = np.frombuffer(payload, dtype=dtype).reshape(channels, height, width).astype(np.float64)
    if not np.isfinite(array).all():
        raise GridFormatError(path, "non-finite values")
    return array


def write_csv(path: PathLike, values: np.ndarray) -> Path:
    array = _as_channels(values)
    if array.shape[0] != 1:
        raise InvalidArgumentError("CSV holds a single map", details={"channels": array.shape[0]})
    if array[0].size > settings.csv_max_pixels:
        raise CapacityError("CSV grid", array[0].size, settings.csv_max_pixels)
    path = Path(path)
    np.savetxt(path, array[0], delimiter=",", fmt="%.17g")
    return path


def read_csv(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        array = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise GridFormatError(path, str(exc))
    if array.size > settings.csv_max_pixels:
        raise CapacityError("CSV grid", array.size, settings.csv_max_pixels)
    if not np.isfinite(array).all():
        raise GridFormatError(path, "non-finite values")
    return array[None]


def write_grid(path: PathLike, values: np.ndarray, fmt: str = "gmap", precision: str = "f64") -> Path:
    if fmt == "gmap":
        return write_gmap(path, values, precision)
    if fmt == "csv":
        return write_csv(path, values)
    raise InvalidArgumentError(f"format '{fmt}' cannot hold grid data", details={"format": fmt})


def read_grid(path: PathLike) -> np.ndarray:
    """Read GMAP or CSV (chosen by the ``.csv`` suffix) as C x H x W float64."""
    if Path(path).suffix.lower() == ".csv":
        return read_csv(path)
    return read_gmap(path)


def read_map(path: PathLike) -> np.ndarray:
    """A single H x W map."""
    array = read_grid(path)
    if array.shape[0] != 1:
        raise GridFormatError(path, f"expected one channel, found {array.shape[0]}")
    return array[0]


def save_bundle(path: PathLike, bundle: SampleBundle, fmt: str = "gmap", precision: str = "f64") -> Path:
    """One channel per sample."""
    return write_grid(path, bundle.values, fmt, precision)


def load_bundle(path: PathLike) -> SampleBundle:
    values = read_grid(path)
    return SampleBundle(GridShape(values.shape[1], values.shape[2]), values)


def save_mask(path: PathLike, mask: PixelMask) -> Path:
    return write_gmap(path, mask.known.astype(np.uint8), "u8")


def load_mask(path: PathLike) -> PixelMask:
    """Nonzero entries mark known pixels."""
    known = read_map(path) != 0
    return PixelMask(GridShape(*known.shape), known)


def model_paths(prefix: PathLike) -> Tuple[Path, Path, Path]:
    prefix = str(prefix)
    return Path(prefix + MEAN_SUFFIX), Path(prefix + CHOL_SUFFIX), Path(prefix + SIDECAR_SUFFIX)


def save_model(prefix: PathLike, g: StructuredGaussian, precision: str = "f64") -> Tuple[Path, Path, Path]:
    """
    Write ``<prefix>.mean.gmap``, ``<prefix>.chol.gmap`` (channel 0 the
    log-diagonal, then one channel per offset) and the ``<prefix>.json`` sidecar.
    """
    mean_path, chol_path, sidecar_path = model_paths(prefix)
    maps = g.chol
    write_gmap(mean_path, g.mean, precision)
    write_gmap(chol_path, np.concatenate([maps.log_diag[None], maps.off_diag], axis=0), precision)
    sidecar = ModelSidecar(
        height=g.shape.height,
        width=g.shape.width,
        radius=g.pattern.radius,
        scaled=maps.scaled,
        diag_scale_a=maps.diag_scale_a,
        diag_scale_b=maps.diag_scale_b if maps.diag_offset_enabled else None,
        off_diag_scale_c=[float(value) for value in maps.off_diag_scale_c],
    )
    sidecar_path.write_text(sidecar.model_dump_json(indent=2))
    logger.info(f"Saved model to {prefix}", extra={"prefix": str(prefix), "grid": str(g.shape)})
    return mean_path, chol_path, sidecar_path


def load_model(prefix: PathLike) -> StructuredGaussian:
    mean_path, chol_path, sidecar_path = model_paths(prefix)
    try:
        sidecar = ModelSidecar.model_validate(json.loads(sidecar_path.read_text()))
    except OSError as exc:
        raise GridFormatError(sidecar_path, f"unreadable ({exc.strerror})")
    except (ValueError, ValidationError) as exc:
        raise GridFormatError(sidecar_path, f"invalid sidecar: {exc}")

    shape = GridShape(sidecar.height, sidecar.width)
    pattern = canonical_pattern(sidecar.radius)
    mean = read_gmap(mean_path)
    chol = read_gmap(chol_path)
    if mean.shape != (1,) + shape.yx:
        raise GridFormatError(mean_path, f"shape {mean.shape} does not match {shape}")
    if chol.shape != (1 + pattern.size,) + shape.yx:
        raise GridFormatError(chol_path, f"expected {1 + pattern.size} channels of {shape}")
    maps = CholeskyMaps(
        shape=shape,
        pattern=pattern,
        log_diag=chol[0],
        off_diag=chol[1:],
        diag_scale_a=sidecar.diag_scale_a,
        diag_scale_b=sidecar.b_value,
        off_diag_scale_c=np.asarray(sidecar.off_diag_scale_c),
        scaled=sidecar.scaled,
    )
    return StructuredGaussian(mean[0], maps)
