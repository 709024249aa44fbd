"""
Flags and output helpers shared by every subcommand.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel

from gridgauss.app.core.grid import GridShape, SampleBundle
from gridgauss.app.exceptions import InvalidArgumentError
from gridgauss.app.utils.gmap_io import save_bundle, write_grid
from gridgauss.app.utils.pgm import write_pgm

logger = logging.getLogger(__name__)

FORMATS = ("gmap", "csv", "pgm")
PRECISIONS = ("f32", "f64")


def common_parser() -> argparse.ArgumentParser:
    """Parent parser with --seed, --out, --format and --precision."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (default: fresh OS entropy)")
    parser.add_argument("--out", type=str, default=None, help="Output path or prefix")
    parser.add_argument("--format", choices=FORMATS, default="gmap", help="Grid output format")
    parser.add_argument("--precision", choices=PRECISIONS, default="f64", help="GMAP value precision")
    return parser


def parse_pixel(text: str, shape: GridShape) -> int:
    """``"y,x"`` to a raster index."""
    try:
        y, x = (int(part) for part in text.split(","))
    except ValueError:
        raise InvalidArgumentError(f"Invalid pixel '{text}', expected y,x", details={"value": text})
    return shape.raster_index(y, x)


def parse_sizes(text: str) -> List[GridShape]:
    """Comma-separated ``HxW`` list."""
    sizes = [GridShape.parse(part.strip()) for part in text.split(",") if part.strip()]
    if not sizes:
        raise InvalidArgumentError("at least one grid size is required", details={"value": text})
    return sizes


def require_out(args: argparse.Namespace) -> str:
    if not args.out:
        raise InvalidArgumentError(f"{args.command} needs --out")
    return args.out


def write_map_output(path: str, values: np.ndarray, fmt: str, precision: str, value_range: Tuple[float, float]) -> Path:
    """One H x W map in the requested format; PGM uses ``value_range``."""
    if fmt == "pgm":
        return write_pgm(path, values, *value_range)
    return write_grid(path, values, fmt, precision)


def write_bundle_output(path: str, bundle: SampleBundle, fmt: str, precision: str) -> List[Path]:
    """
    A bundle in the requested format.

    CSV and PGM hold one map per file; bundles with several maps are then
    written as ``<path>.<index>.<ext>``.
    """
    if fmt == "gmap":
        return [save_bundle(path, bundle, "gmap", precision)]
    if bundle.count == 1:
        paths = [path]
    else:
        stem = str(Path(path).with_suffix("")) if Path(path).suffix else path
        paths = [f"{stem}.{index:04d}.{fmt}" for index in range(bundle.count)]
    value_range = _bundle_range(bundle)
    return [
        write_map_output(target, values, fmt, precision, value_range) for target, values in zip(paths, bundle.values)
    ]


def _bundle_range(bundle: SampleBundle) -> Tuple[float, float]:
    lo, hi = float(bundle.values.min()), float(bundle.values.max())
    return (lo, hi) if hi > lo else (lo - 0.5, lo + 0.5)


def write_report(path: Optional[str], report: Union[BaseModel, Dict[str, Any]]) -> Optional[Path]:
    if not path:
        return None
    text = report.model_dump_json(indent=2) if isinstance(report, BaseModel) else json.dumps(report, indent=2)
    target = Path(path)
    target.write_text(text + "\n")
    logger.debug(f"Wrote report {target}", extra={"path": str(target)})
    return target


def emit(summary: Dict[str, Any]) -> None:
    """Command result as one JSON line on stdout."""
    sys.stdout.write(json.dumps(summary, default=str) + "\n")
    sys.stdout.flush()
