"""
Maximum-likelihood fitting of a structured Gaussian to a sample bundle.

The objective is the bundle NLL. Gradients are analytic: with residuals
``r_s = d_s - mu`` and whitened residuals ``v_s = L^T r_s``,

    dNLL/dmu       = -sum_s L v_s              (= -sum_s Lambda r_s)
    dNLL/dL[n, k]  =  sum_s r_s[n] v_s[k]  - S / diag_n  [n == k]

chained through the exp / tanh parameterisation of the maps.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from gridgauss.app.core.distribution import LOG_2PI, StructuredGaussian, log_density_bundle
from gridgauss.app.core.grid import (
    CholeskyMaps,
    SampleBundle,
    SparsityPattern,
    effective_diagonal,
    effective_off_diagonal,
    log_effective_diagonal,
    offset_slices,
)
from gridgauss.app.core.linops import strictly_lower_product, strictly_upper_product
from gridgauss.app.exceptions import FitDivergedError, InvalidArgumentError, ShapeMismatchError
from gridgauss.app.schemas.fit import FitConfig, FitInit, FitReport
from gridgauss.app.utils.rng import SeedLike, make_rng

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("mean", "log_diag", "off_diag", "diag_scale_a", "diag_scale_b", "off_diag_scale_c")

# Initial additive diagonal term ln(b) under the scaled parameterisation
SCALED_INIT_B = -4.0


@dataclass(frozen=True, eq=False)
class ParameterGradients:
    """NLL gradients with respect to every parameter of the model."""

    mean: np.ndarray
    log_diag: np.ndarray
    off_diag: np.ndarray
    diag_scale_a: float
    diag_scale_b: float
    off_diag_scale_c: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: np.asarray(getattr(self, name), dtype=np.float64) for name in PARAMETER_NAMES}


def _check_bundle(g: StructuredGaussian, bundle: SampleBundle) -> None:
    if bundle.shape != g.shape:
        raise ShapeMismatchError(g.shape.yx, bundle.shape.yx, "bundle")


def nll(g: StructuredGaussian, bundle: SampleBundle) -> float:
    """Negative log-likelihood of the bundle, -sum_s log p(d_s)."""
    _check_bundle(g, bundle)
    return -log_density_bundle(g, bundle)


def _nll_and_gradients(g: StructuredGaussian, bundle: SampleBundle) -> Tuple[float, ParameterGradients]:
    maps = g.chol
    count = bundle.count
    diag = effective_diagonal(maps)
    off = effective_off_diagonal(maps)

    residual = bundle.values - g.mean
    whitened = diag * residual + strictly_upper_product(maps, off, residual)

    value = (
        0.5 * count * g.pixel_count * LOG_2PI
        - count * float(np.sum(log_effective_diagonal(maps)))
        + 0.5 * float(np.sum(whitened**2))
    )

    summed = whitened.sum(axis=0)
    grad_mean = -(diag * summed + strictly_lower_product(maps, off, summed))

    grad_diag = np.sum(residual * whitened, axis=0) - count / diag
    grad_off = np.zeros_like(off)
    for l, offset in enumerate(maps.pattern.offsets):
        slices = offset_slices(maps.shape, offset)
        if slices is None:
            continue
        pixel, neighbor = slices
        grad_off[l][pixel] = np.sum(residual[(slice(None),) + pixel] * whitened[(slice(None),) + neighbor], axis=0)

    exp_part = np.exp(maps.log_diag + maps.diag_scale_a)
    grad_log_diag = grad_diag * exp_part
    grad_a = float(np.sum(grad_log_diag))
    grad_b = float(np.sum(grad_diag)) * math.exp(maps.diag_scale_b) if maps.diag_offset_enabled else 0.0

    if maps.scaled:
        tanh = np.tanh(maps.off_diag)
        scale = maps.off_diag_scale_c[:, None, None]
        grad_psi = grad_off * scale * (1.0 - tanh**2)
        grad_c = np.sum(grad_off * tanh, axis=(1, 2))
    else:
        grad_psi = grad_off
        grad_c = np.zeros(maps.pattern.size)

    gradients = ParameterGradients(
        mean=grad_mean,
        log_diag=grad_log_diag,
        off_diag=grad_psi,
        diag_scale_a=grad_a,
        diag_scale_b=grad_b,
        off_diag_scale_c=grad_c,
    )
    return value, gradients


def nll_gradients(g: StructuredGaussian, bundle: SampleBundle) -> ParameterGradients:
    """
    Analytic NLL gradients {mean, log_diag, off_diag, a, b, c}.

    Off-diagonal entries whose neighbour is outside the grid get zero gradient;
    b gets zero gradient while disabled, c while the maps are unscaled.
    """
    _check_bundle(g, bundle)
    return _nll_and_gradients(g, bundle)[1]


def parameters_of(g: StructuredGaussian) -> Dict[str, np.ndarray]:
    """Flat parameter dict of a model (copies)."""
    maps = g.chol
    return {
        "mean": np.array(g.mean),
        "log_diag": np.array(maps.log_diag),
        "off_diag": np.array(maps.off_diag),
        "diag_scale_a": np.array(maps.diag_scale_a),
        "diag_scale_b": np.array(maps.diag_scale_b),
        "off_diag_scale_c": np.array(maps.off_diag_scale_c),
    }


def model_from_parameters(template: StructuredGaussian, params: Dict[str, np.ndarray]) -> StructuredGaussian:
    """Rebuild a model with the template's grid, pattern and scaling flag."""
    maps = template.chol.with_params(
        log_diag=params["log_diag"],
        off_diag=params["off_diag"],
        diag_scale_a=float(params["diag_scale_a"]),
        diag_scale_b=float(params["diag_scale_b"]),
        off_diag_scale_c=params["off_diag_scale_c"],
    )
    return StructuredGaussian(params["mean"], maps)


class AdamOptimizer:
    """
    Adaptive-moment gradient descent over a dict of parameter arrays.

    Parameters whose mask is False keep their values.
    """

    def __init__(self, learning_rate: float, beta1: float, beta2: float, epsilon: float, trainable: Dict[str, bool]):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.trainable = trainable
        self.step_count = 0
        self._first: Dict[str, np.ndarray] = {}
        self._second: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        self.step_count += 1
        t = self.step_count
        updated = dict(params)
        for name, grad in grads.items():
            if not self.trainable.get(name, False):
                continue
            first = self._first.get(name, np.zeros_like(grad))
            second = self._second.get(name, np.zeros_like(grad))
            first = self.beta1 * first + (1.0 - self.beta1) * grad
            second = self.beta2 * second + (1.0 - self.beta2) * grad**2
            self._first[name] = first
            self._second[name] = second
            first_hat = first / (1.0 - self.beta1**t)
            second_hat = second / (1.0 - self.beta2**t)
            updated[name] = params[name] - self.learning_rate * first_hat / (np.sqrt(second_hat) + self.epsilon)
        return updated


def _diagonal_cap(variance_floor: float) -> float:
    return math.inf if variance_floor <= 0 else 1.0 / math.sqrt(variance_floor)


def _project_variance_floor(params: Dict[str, np.ndarray], cap: float) -> Dict[str, np.ndarray]:
    """Keep the effective diagonal at most 1/sqrt(floor), i.e. implied variance >= floor."""
    if not math.isfinite(cap):
        return params
    projected = dict(params)
    b = float(params["diag_scale_b"])
    if math.isfinite(b) and b > math.log(cap / 2.0):
        b = math.log(cap / 2.0)
        projected["diag_scale_b"] = np.array(b)
    room = cap - (math.exp(b) if math.isfinite(b) else 0.0)
    ceiling = math.log(room) - float(params["diag_scale_a"])
    projected["log_diag"] = np.minimum(params["log_diag"], ceiling)
    return projected


def fit_diagonal_closed_form(bundle: SampleBundle, pattern: SparsityPattern, variance_floor: float = 0.0):
    """
    Closed-form optimum of the diagonal-only model.

    mu is the sample mean and exp(-2 phi) the (biased) per-pixel variance,
    floored at ``variance_floor``.
    """
    variance = np.maximum(bundle.values.var(axis=0), variance_floor)
    if not (variance > 0).all():
        raise InvalidArgumentError("zero per-pixel variance; set a positive variance floor")
    maps = CholeskyMaps.identity(bundle.shape, pattern).with_params(log_diag=-0.5 * np.log(variance))
    return StructuredGaussian(bundle.mean(), maps)


def _initial_model(
    bundle: SampleBundle,
    pattern: SparsityPattern,
    config: FitConfig,
    seed: SeedLike,
    mean: Optional[np.ndarray],
) -> StructuredGaussian:
    shape = bundle.shape
    maps = CholeskyMaps.identity(shape, pattern, scaled=config.scaled_parameterization)
    if config.init is FitInit.SMALL_OFFDIAG and not config.diagonal_only:
        magnitude = config.init_offdiag_scale
        psi = make_rng(seed).uniform(-magnitude, magnitude, size=(pattern.size,) + shape.yx)
        maps = maps.with_params(off_diag=psi)
    if config.scaled_parameterization:
        maps = maps.with_params(diag_scale_b=SCALED_INIT_B)

    if config.fit_mean:
        initial_mean = bundle.mean()
    elif mean is not None:
        initial_mean = np.asarray(mean, dtype=np.float64)
    else:
        initial_mean = np.zeros(shape.yx)
    return StructuredGaussian(initial_mean, maps)


def fit(
    bundle: SampleBundle,
    pattern: SparsityPattern,
    config: Optional[FitConfig] = None,
    seed: SeedLike = 0,
    mean: Optional[np.ndarray] = None,
) -> Tuple[StructuredGaussian, FitReport]:
    """
    Fit mean and Cholesky maps to a bundle by Adam descent on the NLL.

    The mean starts at the bundle mean when ``fit_mean`` is set; otherwise it
    is held at ``mean`` (zeros when omitted). The returned model holds the
    best NLL seen, which is also the last entry of the report trace.

    Raises:
        InvalidArgumentError: If S < 2 with the variance floor disabled
        FitDivergedError: If the NLL becomes NaN or infinite
    """
    config = config or FitConfig()
    if bundle.count < 2 and config.variance_floor <= 0:
        raise InvalidArgumentError(
            "fitting needs at least two samples unless the variance floor is enabled",
            details={"count": bundle.count},
        )

    model = _initial_model(bundle, pattern, config, seed, mean)
    params = parameters_of(model)
    trainable = {
        "mean": config.fit_mean,
        "log_diag": True,
        "off_diag": not config.diagonal_only,
        "diag_scale_a": config.scaled_parameterization,
        "diag_scale_b": config.scaled_parameterization,
        "off_diag_scale_c": config.scaled_parameterization and not config.diagonal_only,
    }
    optimizer = AdamOptimizer(config.learning_rate, config.beta1, config.beta2, config.epsilon, trainable)
    cap = _diagonal_cap(config.variance_floor)
    params = _project_variance_floor(params, cap)

    trace = []
    steps = 0
    best_value = math.inf
    best_params = params
    best_iteration = 0
    gradient_norm = math.nan
    converged = False

    logger.info(
        f"Fitting {bundle.count} samples on a {bundle.shape} grid",
        extra={
            "radius": pattern.radius,
            "diagonal_only": config.diagonal_only,
            "scaled": config.scaled_parameterization,
        },
    )
    for iteration in range(config.max_iterations):
        try:
            current = model_from_parameters(model, params)
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = _nll_and_gradients(current, bundle)
        except InvalidArgumentError:
            # parameters left the finite range
            value = math.nan
        if not math.isfinite(value):
            logger.error(f"Fit diverged at iteration {iteration}", extra={"iteration": iteration})
            raise FitDivergedError(iteration, trace)

        trace.append(value)
        steps += 1
        if value < best_value:
            best_value, best_params, best_iteration = value, params, iteration

        grad_dict = grads.as_dict()
        gradient_norm = math.sqrt(
            sum(float(np.sum(grad_dict[name] ** 2)) for name in PARAMETER_NAMES if trainable[name])
        )
        if iteration % config.log_every == 0:
            logger.debug(
                f"iteration {iteration}: nll {value:.6f}",
                extra={"iteration": iteration, "nll": value, "gradient_norm": gradient_norm},
            )
        if iteration > 0 and abs(trace[-2] - value) <= config.convergence_tol * max(1.0, abs(value)):
            converged = True
            break

        params = _project_variance_floor(optimizer.step(params, grad_dict), cap)

    best_model = model_from_parameters(model, best_params)
    final_value = nll(best_model, bundle)
    if trace[-1] != final_value:
        trace.append(final_value)

    report = FitReport(
        final_nll=final_value,
        iterations=steps,
        gradient_norm=gradient_norm,
        trace=trace,
        converged=converged,
        best_iteration=best_iteration,
        config=config.model_dump(mode="json"),
    )
    logger.info(
        f"Fit finished with nll {final_value:.6f}",
        extra={"iterations": report.iterations, "converged": converged, "best_iteration": best_iteration},
    )
    return best_model, report
