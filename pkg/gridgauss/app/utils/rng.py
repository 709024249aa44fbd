"""
Reproducible random number generation.

Every random draw in the package goes through ``make_rng``: a NumPy
``Generator`` over the PCG64 bit generator, seeded from an integer or a
``SeedSequence``. Standard normals come from ``Generator.standard_normal``
(NumPy's ziggurat transform). Both are covered by NumPy's stream
compatibility policy, so a seed reproduces the same draws across platforms.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, None]


def make_rng(seed: SeedLike) -> np.random.Generator:
    """
    Get a numpy random generator with specified seed.

    Args:
        seed: Integer seed, SeedSequence, or None for OS entropy

    Returns:
        numpy Generator instance backed by PCG64
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_seeds(seed: SeedLike, count: int) -> Sequence[np.random.SeedSequence]:
    """Derive independent child seeds, e.g. one for a model and one for its draws."""
    parent = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return parent.spawn(count)


def standard_normal(seed: SeedLike, shape: Tuple[int, ...]) -> np.ndarray:
    """Draw i.i.d. N(0, 1) values in float64 for the given seed."""
    return make_rng(seed).standard_normal(shape, dtype=np.float64)


def seed_from_option(seed: Optional[int]) -> int:
    """Resolve a CLI seed option; an absent seed draws one from OS entropy."""
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().generate_state(1)[0])
