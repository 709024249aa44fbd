"""
Grayscale heatmaps as binary PGM (P5, maxval 255).

Values are mapped linearly from [lo, hi] to [0, 255] after clipping.
"""

from pathlib import Path
from typing import Tuple, Union

import numpy as np

from gridgauss.app.exceptions import InvalidArgumentError

MAXVAL = 255


def to_gray(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if not hi > lo:
        raise InvalidArgumentError("PGM range needs hi > lo", details={"lo": lo, "hi": hi})
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise InvalidArgumentError("PGM needs an H x W map", details={"ndim": values.ndim})
    scaled = (np.clip(values, lo, hi) - lo) / (hi - lo)
    return np.rint(scaled * MAXVAL).astype(np.uint8)


def write_pgm(path: Union[str, Path], values: np.ndarray, lo: float, hi: float) -> Path:
    gray = to_gray(values, lo, hi)
    height, width = gray.shape
    path = Path(path)
    path.write_bytes(f"P5\n{width} {height}\n{MAXVAL}\n".encode("ascii") + gray.tobytes())
    return path


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Read a P5 file written by ``write_pgm`` back as uint8 H x W."""
    data = Path(path).read_bytes()
    header = data.split(b"\n", 3)
    if len(header) != 4 or header[0] != b"P5":
        raise InvalidArgumentError(f"{path} is not a binary PGM")
    width, height = (int(part) for part in header[1].split())
    return np.frombuffer(header[3], dtype=np.uint8).reshape(height, width)


def write_signed_pgm(path: Union[str, Path], values: np.ndarray, clip: float) -> Path:
    """Signed values in [-clip, clip] on one gray scale, zero at mid-gray."""
    return write_pgm(path, values, -clip, clip)


def write_split_pgm(prefix: Union[str, Path], values: np.ndarray, clip: float) -> Tuple[Path, Path]:
    """Positive part and magnitude of the negative part, each over [0, clip]."""
    values = np.asarray(values, dtype=np.float64)
    prefix = str(prefix)
    positive = write_pgm(prefix + ".pos.pgm", np.maximum(values, 0.0), 0.0, clip)
    negative = write_pgm(prefix + ".neg.pgm", np.maximum(-values, 0.0), 0.0, clip)
    return positive, negative
