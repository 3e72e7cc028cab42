"""Deterministic seed derivation for trial-level random streams.

Every experiment cell gets its own 64-bit seed obtained by folding the cell's
coordinates through the SplitMix64 finalizer::

    state = 0x9E3779B97F4A7C15
    for part in parts:
        state = splitmix64(state ^ (part mod 2**64))

The resulting integer seeds a fresh :func:`numpy.random.default_rng`. Because
a cell's seed depends only on its own coordinates, cells can run in any order
or on any worker and still reproduce bit-for-bit.
"""

import struct

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Stable ids; never reorder, only append.
METHOD_IDS = {
    "sis": 1,
    "dp-sis": 2,
    "two-stage": 3,
    "dp-two-stage": 4,
    "lasso-topk": 5,
}
INSTABILITY_STREAM = 101


def splitmix64(x):
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def float_bits(value):
    """Returns the IEEE-754 bit pattern of ``value`` as an unsigned int."""
    return struct.unpack("<Q", struct.pack("<d", float(value)))[0]


def derive_seed(*parts):
    """Mixes integer parts into a single 64-bit seed.

    Floats are accepted and folded in by their bit pattern, so ``0.1`` and
    ``0.1 + 1e-17`` give different seeds only if they are different doubles.
    """
    state = _GOLDEN
    for part in parts:
        if isinstance(part, float):
            part = float_bits(part)
        state = splitmix64(state ^ (int(part) & _MASK))
    return state


def make_rng(seed_or_rng):
    """Returns ``(generator, seed)`` for an int seed, a Generator, or None."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng, None
    if seed_or_rng is None:
        return np.random.default_rng(), None
    seed = int(seed_or_rng)
    return np.random.default_rng(seed), seed
