import logging
import math

import numpy as np
import pytest

from gridgauss.app.config.settings import settings
from gridgauss.app.core.distribution import StructuredGaussian, covariance_row, marginal_variance, sample
from gridgauss.app.core.fitting import (
    PARAMETER_NAMES,
    AdamOptimizer,
    fit,
    fit_diagonal_closed_form,
    model_from_parameters,
    nll,
    nll_gradients,
    parameters_of,
)
from gridgauss.app.core.grid import GridShape, SampleBundle, canonical_pattern
from gridgauss.app.core.oracle import dense_nll
from gridgauss.app.core.synth import random_structured_gaussian, smooth_fields
from gridgauss.app.exceptions import FitDivergedError, InvalidArgumentError, ShapeMismatchError
from gridgauss.app.schemas.fit import FitConfig, FitInit

# Setup logging
logging.basicConfig(level=logging.DEBUG)
logger = logging.getLogger(__name__)

STEP = 1e-6


@pytest.fixture(scope="function")
def pattern():
    return canonical_pattern(1)


def _finite_difference(model, bundle, name):
    params = parameters_of(model)
    base = np.array(params[name], dtype=np.float64)
    gradient = np.zeros_like(base)
    for index in np.ndindex(base.shape):
        shifted = []
        for sign in (1.0, -1.0):
            perturbed = dict(params)
            value = base.copy()
            value[index] += sign * STEP
            perturbed[name] = value
            shifted.append(nll(model_from_parameters(model, perturbed), bundle))
        gradient[index] = (shifted[0] - shifted[1]) / (2.0 * STEP)
    return gradient


def test_nll_single_zero_sample():
    g = StructuredGaussian.standard(GridShape(1, 1), canonical_pattern(1))
    assert nll(g, SampleBundle.from_array(np.zeros((1, 1, 1)))) == pytest.approx(0.918939, abs=1e-6)


def test_nll_matches_dense_oracle():
    g = random_structured_gaussian(GridShape(5, 5), 2, seed=3, scaled=True)
    bundle = sample(g, 4, seed=4, exact=True)
    assert nll(g, bundle) == pytest.approx(dense_nll(g, bundle), rel=1e-10)


def test_nll_is_permutation_invariant():
    g = random_structured_gaussian(GridShape(4, 4), 1, seed=5)
    bundle = sample(g, 6, seed=6, exact=True)
    permuted = bundle.subset([3, 5, 0, 1, 4, 2])
    assert nll(g, permuted) == pytest.approx(nll(g, bundle), rel=1e-13)


def test_nll_rejects_other_grid(pattern):
    g = StructuredGaussian.standard(GridShape(2, 2), pattern)
    with pytest.raises(ShapeMismatchError):
        nll(g, SampleBundle.from_array(np.zeros((2, 3, 3))))


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("scaled", [False, True])
def test_gradients_match_finite_differences(seed, scaled):
    g = random_structured_gaussian(GridShape(4, 4), 1, seed=seed, scaled=scaled)
    bundle = SampleBundle(g.shape, g.mean + np.random.default_rng(seed).normal(size=(3,) + g.shape.yx))
    analytic = nll_gradients(g, bundle).as_dict()

    names = [name for name in PARAMETER_NAMES if name != "diag_scale_b" or g.chol.diag_offset_enabled]
    numeric = {name: _finite_difference(g, bundle, name) for name in names}
    for name in names:
        np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-4, atol=1e-6, err_msg=name)

    stacked_analytic = np.concatenate([np.ravel(analytic[name]) for name in names])
    stacked_numeric = np.concatenate([np.ravel(numeric[name]) for name in names])
    assert np.linalg.norm(stacked_analytic - stacked_numeric) / np.linalg.norm(stacked_analytic) < 1e-4


def test_gradients_vanish_outside_the_grid(pattern):
    g = random_structured_gaussian(GridShape(4, 4), 1, seed=1)
    bundle = sample(g, 3, seed=2, exact=True)
    grads = nll_gradients(g, bundle)
    outside = ~pattern.neighbor_mask(g.shape)
    assert (grads.off_diag[outside] == 0.0).all()
    assert grads.diag_scale_b == 0.0
    np.testing.assert_array_equal(grads.off_diag_scale_c, 0.0)


def test_closed_form_diagonal_fit_is_stationary(pattern):
    bundle = SampleBundle.from_array(np.random.default_rng(7).normal(2.0, 3.0, size=(50, 3, 4)))
    model = fit_diagonal_closed_form(bundle, pattern)
    grads = nll_gradients(model, bundle)
    np.testing.assert_allclose(grads.mean, 0.0, atol=1e-9)
    np.testing.assert_allclose(grads.log_diag, 0.0, atol=1e-9)
    np.testing.assert_allclose(model.mean, bundle.mean())


def test_closed_form_needs_floor_for_constant_pixels(pattern):
    bundle = SampleBundle.from_array(np.ones((3, 2, 2)))
    with pytest.raises(InvalidArgumentError):
        fit_diagonal_closed_form(bundle, pattern)
    model = fit_diagonal_closed_form(bundle, pattern, variance_floor=1e-4)
    np.testing.assert_allclose(model.chol.log_diag, -0.5 * math.log(1e-4))


def test_adam_respects_trainable_mask():
    optimizer = AdamOptimizer(0.1, 0.9, 0.999, 1e-8, {"mean": True, "log_diag": False})
    params = {"mean": np.zeros(3), "log_diag": np.zeros(3)}
    grads = {"mean": np.array([1.0, -2.0, 0.0]), "log_diag": np.ones(3)}
    updated = optimizer.step(params, grads)
    np.testing.assert_allclose(updated["mean"], [-0.1, 0.1, 0.0], atol=1e-9)
    np.testing.assert_array_equal(updated["log_diag"], 0.0)
    np.testing.assert_array_equal(params["mean"], 0.0)


def test_fit_rejects_single_sample_without_floor(pattern):
    bundle = SampleBundle.from_array(np.zeros((1, 3, 3)))
    with pytest.raises(InvalidArgumentError):
        fit(bundle, pattern, FitConfig(variance_floor=0.0))


def test_fit_recovers_iid_standard_normal(pattern):
    bundle = SampleBundle.from_array(np.random.default_rng(8).standard_normal((10_000, 4, 4)))
    model, report = fit(bundle, pattern, FitConfig(diagonal_only=True, max_iterations=300))
    np.testing.assert_allclose(model.mean, 0.0, atol=0.05)
    np.testing.assert_allclose(np.exp(-model.chol.log_diag), 1.0, rtol=0.03)
    np.testing.assert_array_equal(model.chol.off_diag, 0.0)
    assert report.final_nll == report.trace[-1]
    assert report.final_nll == pytest.approx(nll(model, bundle), rel=1e-12)


def test_fit_holds_fixed_mean(pattern):
    bundle = SampleBundle.from_array(np.random.default_rng(9).normal(1.0, 1.0, size=(40, 3, 3)))
    fixed = np.full((3, 3), 0.5)
    model, _ = fit(bundle, pattern, FitConfig(fit_mean=False, max_iterations=50), mean=fixed)
    np.testing.assert_array_equal(model.mean, fixed)


def test_fit_identity_init_and_trace(pattern):
    bundle = sample(random_structured_gaussian(GridShape(4, 4), 1, seed=10), 30, seed=11, exact=True)
    model, report = fit(bundle, pattern, FitConfig(init=FitInit.IDENTITY, max_iterations=200))
    assert len(report.trace) - 1 <= report.iterations <= len(report.trace)
    assert min(report.trace) == pytest.approx(report.final_nll, rel=1e-12)
    assert report.final_nll < report.trace[0]
    assert report.config["init"] == "identity"


def test_iterations_count_objective_evaluations_only(pattern):
    bundle = sample(random_structured_gaussian(GridShape(4, 4), 1, seed=17), 20, seed=18, exact=True)
    _, report = fit(bundle, pattern, FitConfig(max_iterations=5, learning_rate=1e-3))
    assert not report.converged
    assert report.iterations == 5
    assert len(report.trace) in (5, 6)
    assert report.trace[-1] == report.final_nll


def test_variance_floor_default_follows_settings(mocker):
    mocker.patch.object(settings, "variance_floor", 1e-3)
    assert FitConfig().variance_floor == 1e-3
    assert FitConfig(variance_floor=0.0).variance_floor == 0.0


def test_degenerate_bundle_converges_at_variance_floor(pattern):
    values = np.random.default_rng(12).normal(size=(3, 3))
    bundle = SampleBundle.from_array(np.broadcast_to(values, (4, 3, 3)))
    model, report = fit(bundle, pattern, FitConfig(variance_floor=1e-6))
    assert report.converged
    assert math.isfinite(report.final_nll)
    np.testing.assert_allclose(marginal_variance(model), 1e-6, rtol=1e-3)


def test_fit_raises_when_objective_diverges(pattern):
    bundle = SampleBundle.from_array(np.ones((4, 3, 3)))
    with pytest.raises(FitDivergedError) as exc:
        fit(bundle, pattern, FitConfig(learning_rate=1e3, variance_floor=0.0))
    assert exc.value.details["iteration"] >= 1
    assert exc.value.trace


@pytest.mark.slow
def test_fit_recovers_ground_truth_model():
    truth = random_structured_gaussian(GridShape(8, 8), 1, seed=13)
    train = sample(truth, 256, seed=14, exact=True)
    held_out = sample(truth, 256, seed=15, exact=True)
    model, report = fit(train, truth.pattern, FitConfig(max_iterations=2000))

    assert nll(model, held_out) <= 1.02 * nll(truth, held_out)
    assert report.final_nll <= nll(truth, train)

    centre = truth.shape.raster_index(4, 4)
    fitted_row = covariance_row(model, centre).ravel()
    true_row = covariance_row(truth, centre).ravel()
    assert np.corrcoef(fitted_row, true_row)[0, 1] > 0.9


@pytest.mark.slow
def test_full_fit_beats_diagonal_on_correlated_fields(pattern):
    shape = GridShape(8, 8)
    fields = smooth_fields(shape, 512, seed=16, length_scale=2.0)
    train = SampleBundle(shape, fields[:256])
    held_out = SampleBundle(shape, fields[256:])

    diagonal = fit_diagonal_closed_form(train, pattern)
    full, report = fit(train, pattern, FitConfig(max_iterations=2000))
    assert report.final_nll <= nll(diagonal, train)
    assert nll(full, held_out) < nll(diagonal, held_out)
