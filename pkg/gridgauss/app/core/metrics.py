"""
Depth-style accuracy metrics and sparsification-based uncertainty scores.

Sparsification removes the least confident pixels first, in fraction steps,
and tracks the error of what remains. AUSE is the area between that curve
and the oracle curve (pixels removed by their true error); AURG the area
between the random-removal curve and it. Random removal is taken at its
expectation, a flat line at the full-set error.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from gridgauss.app.core.grid import SampleBundle
from gridgauss.app.exceptions import InvalidArgumentError, ShapeMismatchError
from gridgauss.app.schemas.evaluation import EvalRow

logger = logging.getLogger(__name__)

A1_THRESHOLD = 1.25
DEFAULT_FRACTION_STEPS = 50
DEFAULT_MAX_FRACTION = 0.99


class SparsificationMetric(str, Enum):
    ABSREL = "absrel"
    RMSE = "rmse"
    A1 = "a1"


def default_fractions() -> np.ndarray:
    return np.linspace(0.0, DEFAULT_MAX_FRACTION, DEFAULT_FRACTION_STEPS)


@dataclass(frozen=True, eq=False)
class EvalPair:
    """Prediction, ground truth, per-pixel uncertainty and valid-pixel mask."""

    prediction: np.ndarray
    ground_truth: np.ndarray
    uncertainty: Optional[np.ndarray] = None
    valid_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        prediction = np.asarray(self.prediction, dtype=np.float64)
        ground_truth = np.asarray(self.ground_truth, dtype=np.float64)
        if prediction.ndim != 2:
            raise InvalidArgumentError("prediction must be an H x W map", details={"ndim": prediction.ndim})
        if ground_truth.shape != prediction.shape:
            raise ShapeMismatchError(prediction.shape, ground_truth.shape, "ground truth")
        if self.valid_mask is None:
            valid = np.ones(prediction.shape, dtype=bool)
        else:
            valid = np.asarray(self.valid_mask).astype(bool)
            if valid.shape != prediction.shape:
                raise ShapeMismatchError(prediction.shape, valid.shape, "valid mask")
        uncertainty = None
        if self.uncertainty is not None:
            uncertainty = np.asarray(self.uncertainty, dtype=np.float64)
            if uncertainty.shape != prediction.shape:
                raise ShapeMismatchError(prediction.shape, uncertainty.shape, "uncertainty")
        object.__setattr__(self, "prediction", prediction)
        object.__setattr__(self, "ground_truth", ground_truth)
        object.__setattr__(self, "uncertainty", uncertainty)
        object.__setattr__(self, "valid_mask", valid)

    def valid_values(self) -> Tuple[np.ndarray, np.ndarray]:
        """Prediction and ground truth at valid pixels, raster order."""
        if not self.valid_mask.any():
            raise InvalidArgumentError("no valid pixels to evaluate")
        prediction = self.prediction[self.valid_mask]
        ground_truth = self.ground_truth[self.valid_mask]
        if not (np.isfinite(prediction).all() and np.isfinite(ground_truth).all()):
            raise InvalidArgumentError("prediction and ground truth must be finite on valid pixels")
        if not (ground_truth > 0).all():
            raise InvalidArgumentError(
                "ground truth must be positive on valid pixels",
                details={"non_positive": int(np.count_nonzero(ground_truth <= 0))},
            )
        return prediction, ground_truth


@dataclass(frozen=True)
class DepthMetrics:
    valid_pixels: int
    absrel: float
    sqrel: float
    rmse: float
    a1: float
    a2: float
    a3: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "absrel": self.absrel,
            "sqrel": self.sqrel,
            "rmse": self.rmse,
            "a1": self.a1,
            "a2": self.a2,
            "a3": self.a3,
        }


@dataclass(frozen=True, eq=False)
class SparsificationResult:
    metric: SparsificationMetric
    fractions: np.ndarray
    uncertainty_curve: np.ndarray
    oracle_curve: np.ndarray
    random_curve: np.ndarray
    ause: float
    aurg: float


def _ratio(prediction: np.ndarray, ground_truth: np.ndarray) -> np.ndarray:
    """max(p/g, g/p); non-positive predictions never pass a threshold."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(prediction / ground_truth, ground_truth / prediction)
    return np.where(prediction > 0, ratio, np.inf)


def depth_metrics(pair: EvalPair) -> DepthMetrics:
    """
    AbsRel, SqRel, RMSE and the A1/A2/A3 threshold accuracies over valid pixels.

    Raises:
        InvalidArgumentError: If no pixel is valid or a valid ground truth is not positive
    """
    prediction, ground_truth = pair.valid_values()
    error = prediction - ground_truth
    ratio = _ratio(prediction, ground_truth)
    return DepthMetrics(
        valid_pixels=int(prediction.size),
        absrel=float(np.mean(np.abs(error) / ground_truth)),
        sqrel=float(np.mean(error**2 / ground_truth)),
        rmse=float(np.sqrt(np.mean(error**2))),
        a1=float(np.mean(ratio < A1_THRESHOLD)),
        a2=float(np.mean(ratio < A1_THRESHOLD**2)),
        a3=float(np.mean(ratio < A1_THRESHOLD**3)),
    )


def _contributions(metric: SparsificationMetric, prediction: np.ndarray, ground_truth: np.ndarray) -> np.ndarray:
    """Per-pixel terms whose mean is the metric (before the RMSE square root)."""
    error = prediction - ground_truth
    if metric is SparsificationMetric.RMSE:
        return error**2
    if metric is SparsificationMetric.ABSREL:
        return np.abs(error) / ground_truth
    return (_ratio(prediction, ground_truth) >= A1_THRESHOLD).astype(np.float64)


def _curve(metric: SparsificationMetric, ordered: np.ndarray, removed: np.ndarray) -> np.ndarray:
    """Metric of what remains after dropping the first ``removed[i]`` ordered pixels."""
    suffix = np.cumsum(ordered[::-1])[::-1]
    remaining = ordered.size - removed
    values = suffix[removed] / remaining
    return np.sqrt(values) if metric is SparsificationMetric.RMSE else values


def sparsification_curves(
    pair: EvalPair,
    metric: SparsificationMetric = SparsificationMetric.RMSE,
    fractions: Optional[Iterable[float]] = None,
) -> SparsificationResult:
    """
    Sparsification curves, AUSE and AURG for one pair.

    Pixels are ranked by decreasing uncertainty; ties keep raster order. For
    ``a1`` the curves track the failure rate 1 - a1 so lower is better for
    every metric. Areas use the trapezoid rule over the fraction grid.

    Raises:
        InvalidArgumentError: If fewer than two fractions are given, a
            fraction lies outside [0, 1), or the uncertainty is missing or
            not finite on valid pixels
    """
    metric = SparsificationMetric(metric)
    fractions = default_fractions() if fractions is None else np.asarray(list(fractions), dtype=np.float64)
    if fractions.ndim != 1 or fractions.size < 2:
        raise InvalidArgumentError("sparsification needs at least two fraction steps")
    if (fractions < 0).any() or (fractions >= 1).any() or (np.diff(fractions) <= 0).any():
        raise InvalidArgumentError("fractions must increase strictly within [0, 1)")
    if pair.uncertainty is None:
        raise InvalidArgumentError("sparsification needs an uncertainty map")

    prediction, ground_truth = pair.valid_values()
    uncertainty = pair.uncertainty[pair.valid_mask]
    if not np.isfinite(uncertainty).all():
        raise InvalidArgumentError("uncertainty must be finite on valid pixels")

    contributions = _contributions(metric, prediction, ground_truth)
    removed = np.floor(fractions * contributions.size).astype(int)
    removed = np.minimum(removed, contributions.size - 1)

    by_uncertainty = contributions[np.argsort(-uncertainty, kind="stable")]
    by_error = contributions[np.argsort(-contributions, kind="stable")]
    uncertainty_curve = _curve(metric, by_uncertainty, removed)
    oracle_curve = _curve(metric, by_error, removed)
    random_curve = np.full(fractions.shape, _curve(metric, contributions, np.zeros(1, dtype=int))[0])

    ause = float(trapezoid(uncertainty_curve - oracle_curve, fractions))
    aurg = float(trapezoid(random_curve - uncertainty_curve, fractions))
    return SparsificationResult(
        metric=metric,
        fractions=fractions,
        uncertainty_curve=uncertainty_curve,
        oracle_curve=oracle_curve,
        random_curve=random_curve,
        ause=ause,
        aurg=aurg,
    )


def per_pixel_uncertainty_from_samples(bundle: SampleBundle) -> np.ndarray:
    """Unbiased per-pixel sample standard deviation (divisor S - 1)."""
    if bundle.count < 2:
        raise InvalidArgumentError(
            "need at least two samples for a standard deviation", details={"count": bundle.count}
        )
    return bundle.values.std(axis=0, ddof=1)


def evaluate_pairs(
    pairs: Sequence[Tuple[str, EvalPair]],
    metric: SparsificationMetric = SparsificationMetric.RMSE,
    fractions: Optional[Iterable[float]] = None,
) -> List[EvalRow]:
    """One EvalRow per named pair; sparsification fields are filled when an uncertainty map is present."""
    fraction_grid = None if fractions is None else list(fractions)
    rows = []
    for name, pair in pairs:
        scores = depth_metrics(pair)
        row = {"name": name, "valid_pixels": scores.valid_pixels, **scores.as_dict()}
        if pair.uncertainty is not None:
            result = sparsification_curves(pair, metric, fraction_grid)
            row.update(sparsification_metric=result.metric.value, ause=result.ause, aurg=result.aurg)
        rows.append(EvalRow(**row))
        logger.debug(f"Evaluated pair {name}", extra={"pair": name, **scores.as_dict()})
    return rows


def summarize_rows(rows: Sequence[EvalRow]) -> Dict[str, float]:
    """Column means of the numeric fields that every row carries."""
    if not rows:
        raise InvalidArgumentError("no evaluation rows to summarize")
    columns = ["valid_pixels", "absrel", "sqrel", "rmse", "a1", "a2", "a3", "ause", "aurg"]
    summary = {}
    for column in columns:
        values = [getattr(row, column) for row in rows]
        if all(value is not None for value in values):
            summary[column] = float(np.mean(values))
    return summary
