"""
``eval``: depth metrics and sparsification scores for prediction / ground-truth pairs.

Each channel of the prediction, ground-truth and uncertainty files forms
one pair. Uncertainty can instead come from a sample bundle (per-pixel
sample std); the bundle mean then stands in for a missing prediction.
"""

import argparse
import csv
from pathlib import Path
from typing import List, Optional

import numpy as np

from gridgauss.app.commands.common import common_parser, emit, write_report
from gridgauss.app.core.metrics import (
    DEFAULT_FRACTION_STEPS,
    DEFAULT_MAX_FRACTION,
    EvalPair,
    SparsificationMetric,
    evaluate_pairs,
    per_pixel_uncertainty_from_samples,
    summarize_rows,
)
from gridgauss.app.exceptions import InvalidArgumentError, ShapeMismatchError
from gridgauss.app.utils.gmap_io import load_bundle, read_grid, read_map
from gridgauss.app.utils.logging_config import get_command_logger


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", parents=[common_parser()], help="Accuracy and uncertainty metrics")
    parser.add_argument("--pred", default=None, help="Prediction maps (one channel per pair)")
    parser.add_argument("--gt", required=True, help="Ground-truth maps (one channel per pair)")
    parser.add_argument("--uncertainty", default=None, help="Uncertainty maps (one channel per pair)")
    parser.add_argument("--samples", default=None, help="Bundle whose per-pixel std is the uncertainty")
    parser.add_argument("--valid-mask", default=None, help="Valid-pixel mask map (nonzero = valid)")
    parser.add_argument("--metric", choices=[metric.value for metric in SparsificationMetric], default="rmse")
    parser.add_argument("--steps", type=int, default=DEFAULT_FRACTION_STEPS, help="Sparsification fraction steps")
    parser.add_argument("--max-fraction", type=float, default=DEFAULT_MAX_FRACTION)
    parser.add_argument("--report", default=None, help="JSON rows; a CSV summary is written beside it")
    parser.set_defaults(handler=run)


def _channels(path: Optional[str], count: Optional[int]) -> Optional[np.ndarray]:
    if path is None:
        return None
    array = read_grid(path)
    if count is not None and array.shape[0] not in (1, count):
        raise InvalidArgumentError(f"{path} has {array.shape[0]} channels, expected {count}")
    return array


def _pick(array: Optional[np.ndarray], index: int) -> Optional[np.ndarray]:
    if array is None:
        return None
    return array[index if array.shape[0] > 1 else 0]


def write_summary_csv(path: Path, summary: dict) -> Path:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["metric", "mean"])
        for key, value in summary.items():
            writer.writerow([key, repr(value)])
    return path


def run(args: argparse.Namespace) -> int:
    log = get_command_logger("eval")
    ground_truth = read_grid(args.gt)
    count = ground_truth.shape[0]

    prediction = _channels(args.pred, count)
    uncertainty = _channels(args.uncertainty, count)
    if args.samples is not None:
        if uncertainty is not None:
            raise InvalidArgumentError("give at most one of --uncertainty and --samples")
        bundle = load_bundle(args.samples)
        uncertainty = per_pixel_uncertainty_from_samples(bundle)[None]
        if prediction is None:
            prediction = bundle.mean()[None]
    if prediction is None:
        raise InvalidArgumentError("eval needs --pred or --samples")
    if prediction.shape[1:] != ground_truth.shape[1:]:
        raise ShapeMismatchError(ground_truth.shape[1:], prediction.shape[1:], "prediction")
    valid = read_map(args.valid_mask) != 0 if args.valid_mask else None

    pairs = [
        (
            f"pair-{index:03d}",
            EvalPair(_pick(prediction, index), ground_truth[index], _pick(uncertainty, index), valid),
        )
        for index in range(count)
    ]
    fractions = np.linspace(0.0, args.max_fraction, args.steps)
    rows = evaluate_pairs(pairs, args.metric, fractions)
    summary = summarize_rows(rows)
    log.info(f"Evaluated {len(rows)} pairs", extra={"pairs": len(rows), "metric": args.metric})

    outputs: List[str] = []
    if args.report:
        report_path = Path(args.report)
        report_path.write_text("\n".join(row.model_dump_json() for row in rows) + "\n")
        outputs.append(str(report_path))
        outputs.append(str(write_summary_csv(report_path.with_suffix(".csv"), summary)))
    write_report(args.out, {"schema_version": rows[0].schema_version, "summary": summary})
    emit({"pairs": len(rows), "summary": summary, "outputs": outputs})
    return 0
