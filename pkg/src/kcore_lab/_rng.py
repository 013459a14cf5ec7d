"""Deterministic, splittable random streams.

Every stream is a Philox generator keyed by a tuple of integers, e.g.
``(seed, trial)``. Two streams with different keys are independent, so
trials can be evaluated in any order or in parallel with identical results.
"""

import numpy as np

_MASK = (1 << 64) - 1


def stream(*key: int) -> np.random.Generator:
    words = [int(k) & _MASK for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
