"""Deterministic seed derivation.

Every random quantity in the package is drawn from a generator keyed by a
master seed plus a tuple of non-negative integer keys (draw index, component
id, ...). Generators built from the same key are identical no matter which
process builds them or in what order, which is what makes parallel runs
reproducible.
"""

from __future__ import annotations

import numpy as np

# component ids used as the second key, kept distinct so streams never collide
STREAM_LATENT = 1
STREAM_STARTS = 2
STREAM_BOOTSTRAP = 3
STREAM_CONSUMERS = 4
STREAM_DATA = 5
STREAM_SPLINE = 6
STREAM_RFF = 7
STREAM_BASELINE = 8


def child_seed(seed: int, *keys: int) -> np.random.SeedSequence:
    """Return the seed sequence for ``(seed, *keys)``."""
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and keys must be non-negative integers")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(child_seed(seed, *keys)))


def int_seed(seed: int, *keys: int) -> int:
    """Derive a plain 32-bit integer seed, for APIs that only accept ints."""
    return int(child_seed(seed, *keys).generate_state(1, dtype=np.uint32)[0])
