"""Deterministic RNG stream splitting.

Every random stream is addressed by the master seed plus a path of integer
keys, e.g. ``(cell, fold, stage, generation, point)``.  Streams with distinct
paths are statistically independent (numpy ``SeedSequence`` spawn keys), so
markets can run in any order or in parallel without changing results.
"""

from __future__ import annotations

import numpy as np


def as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (int, np.integer)) and seed >= 0:
        return np.random.SeedSequence(int(seed))
    raise TypeError(f"seed must be a non-negative int or SeedSequence, got {seed!r}")


def child(seed, *keys: int) -> np.random.SeedSequence:
    ss = as_seedseq(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in keys))


def rng_for(seed, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(child(seed, *keys)))


# stage keys used inside a training run
STAGE_INIT = 0
STAGE_MARKETS = 1
STAGE_BREED = 2
STAGE_REINIT = 3
STAGE_TEST = 4
