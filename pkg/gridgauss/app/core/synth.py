"""
Synthetic ensembles: sample bundles with known or controlled structure.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np

from gridgauss.app.core.distribution import StructuredGaussian, sample
from gridgauss.app.core.grid import CholeskyMaps, GridShape, SampleBundle, canonical_pattern
from gridgauss.app.exceptions import InvalidArgumentError, ShapeMismatchError
from gridgauss.app.schemas.synth import SynthKind, SynthSpec
from gridgauss.app.utils.rng import SeedLike, make_rng, spawn_seeds

logger = logging.getLogger(__name__)

# Upper bound on bump-profile entries held in memory at once
_FIELD_CHUNK_ENTRIES = 1 << 24


def random_structured_gaussian(
    shape: GridShape, radius: int, seed: SeedLike, scaled: bool = False
) -> StructuredGaussian:
    """
    A well-conditioned random ground-truth model.

    Log-diagonal uniform in [-0.3, 0.3]. Off-diagonals are kept small
    relative to the diagonal, shrinking with the pattern size so that
    row sums of |L| stay comparable across radii.
    """
    pattern = canonical_pattern(radius)
    rng = make_rng(seed)
    shrink = 1.0 / math.sqrt(pattern.size)
    log_diag = rng.uniform(-0.3, 0.3, size=shape.yx)
    if scaled:
        maps = CholeskyMaps(
            shape=shape,
            pattern=pattern,
            log_diag=log_diag,
            off_diag=rng.standard_normal((pattern.size,) + shape.yx),
            diag_scale_a=float(rng.uniform(-0.2, 0.2)),
            diag_scale_b=math.log(0.1),
            off_diag_scale_c=rng.uniform(0.1, 0.4, size=pattern.size) * shrink,
            scaled=True,
        )
    else:
        maps = CholeskyMaps(
            shape=shape,
            pattern=pattern,
            log_diag=log_diag,
            off_diag=rng.uniform(-0.4, 0.4, size=(pattern.size,) + shape.yx) * shrink,
        )
    return StructuredGaussian(rng.standard_normal(shape.yx), maps)


def _std_map(spec: SynthSpec, shape: GridShape) -> np.ndarray:
    std = np.asarray(spec.std, dtype=np.float64)
    if std.ndim == 0:
        return np.full(shape.yx, float(std))
    if std.shape != shape.yx:
        raise ShapeMismatchError(shape.yx, std.shape, "std map")
    return std


def smooth_fields(
    shape: GridShape,
    count: int,
    seed: SeedLike,
    length_scale: float = 2.0,
    amplitude: float = 1.0,
    noise_std: float = 0.05,
    bumps: Optional[int] = None,
) -> np.ndarray:
    """
    Sums of Gaussian bumps ``exp(-d^2 / (2 l^2))`` plus an i.i.d. nugget.

    Bump centres are uniform over the grid extended by one length scale on
    every side; weights are normal, scaled so the per-pixel field variance is
    roughly ``amplitude^2``.
    """
    if length_scale <= 0 or amplitude <= 0 or noise_std < 0:
        raise InvalidArgumentError(
            "length_scale and amplitude must be positive, noise_std non-negative",
            details={"length_scale": length_scale, "amplitude": amplitude, "noise_std": noise_std},
        )
    height, width = shape.yx
    bump_count = bumps or max(4, math.ceil(2 * shape.pixel_count / length_scale**2))
    area = (height + 2 * length_scale) * (width + 2 * length_scale)
    weight_scale = amplitude * math.sqrt(area / (bump_count * math.pi * length_scale**2))

    rng = make_rng(seed)
    ys = np.arange(height, dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)
    fields = np.empty((count,) + shape.yx)
    chunk = max(1, _FIELD_CHUNK_ENTRIES // (bump_count * (height + width)))
    for start in range(0, count, chunk):
        stop = min(count, start + chunk)
        size = stop - start
        cy = rng.uniform(-length_scale, height - 1 + length_scale, size=(size, bump_count))
        cx = rng.uniform(-length_scale, width - 1 + length_scale, size=(size, bump_count))
        weights = rng.standard_normal((size, bump_count)) * weight_scale
        # separable bumps: sum_k w_k g_k(y) h_k(x) as a batched matrix product
        rows = np.exp(-((ys[None, None, :] - cy[..., None]) ** 2) / (2.0 * length_scale**2))
        cols = np.exp(-((xs[None, None, :] - cx[..., None]) ** 2) / (2.0 * length_scale**2))
        fields[start:stop] = np.matmul((rows * weights[..., None]).transpose(0, 2, 1), cols)
    if noise_std > 0:
        fields += noise_std * rng.standard_normal(fields.shape)
    return fields


def generate(spec: SynthSpec) -> Tuple[SampleBundle, Optional[StructuredGaussian]]:
    """
    Draw the ensemble described by ``spec``.

    Returns the bundle plus the generating model when it has one:
    ground_truth_gmrf always, diagonal_noise when every std is positive,
    smooth_field never.
    """
    shape = GridShape(spec.height, spec.width)
    kind = SynthKind(spec.kind)
    logger.info(
        f"Generating {spec.count} {kind.value} maps on a {shape} grid",
        extra={"kind": kind.value, "count": spec.count, "seed": spec.seed},
    )

    if kind is SynthKind.GROUND_TRUTH_GMRF:
        model_seed, sample_seed = spawn_seeds(spec.seed, 2)
        model = random_structured_gaussian(shape, spec.radius, model_seed, scaled=spec.scaled)
        return sample(model, spec.count, sample_seed, exact=True), model

    if kind is SynthKind.SMOOTH_FIELD:
        fields = smooth_fields(
            shape,
            spec.count,
            spec.seed,
            length_scale=spec.length_scale,
            amplitude=spec.amplitude,
            noise_std=spec.noise_std,
            bumps=spec.bumps,
        )
        return SampleBundle(shape, spec.mean + fields), None

    std = _std_map(spec, shape)
    noise = make_rng(spec.seed).standard_normal((spec.count,) + shape.yx)
    bundle = SampleBundle(shape, spec.mean + std * noise)
    if not (std > 0).all():
        return bundle, None
    pattern = canonical_pattern(spec.radius)
    maps = CholeskyMaps.identity(shape, pattern).with_params(log_diag=-np.log(std))
    return bundle, StructuredGaussian(np.full(shape.yx, spec.mean), maps)


def lag1_autocorrelation(bundle: SampleBundle) -> float:
    """
    Pooled correlation between horizontally and vertically adjacent pixels
    of the per-pixel-centred bundle.
    """
    centred = bundle.values - bundle.mean()
    pairs = []
    if bundle.shape.width > 1:
        pairs.append((centred[:, :, :-1].ravel(), centred[:, :, 1:].ravel()))
    if bundle.shape.height > 1:
        pairs.append((centred[:, :-1, :].ravel(), centred[:, 1:, :].ravel()))
    if not pairs:
        raise InvalidArgumentError("a 1x1 grid has no adjacent pixels")
    left = np.concatenate([pair[0] for pair in pairs])
    right = np.concatenate([pair[1] for pair in pairs])
    denominator = math.sqrt(float(np.sum(left**2)) * float(np.sum(right**2)))
    if denominator == 0:
        return 0.0
    return float(np.sum(left * right)) / denominator
