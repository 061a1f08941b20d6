"""Small shared helpers: seeded RNG streams and integer rounding."""

import numpy as np


def rng_from(seed, *tags):
    """Deterministic generator for (seed, *tags).

    Tags keep independent random streams (augmentation, batch order,
    weight init, ...) from colliding when they share one user seed.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(t) for t in tags)))


def round_half_up(x):
    """Round to nearest integer, ties away from zero toward +inf.

    np.round uses banker's rounding; pixel quantization here is
    specified as half-up so 0.5 -> 1.
    """
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def quantize_u8(x):
    """Map float array to uint8 with half-up rounding and clamping."""
    return np.clip(round_half_up(x), 0, 255).astype(np.uint8)
