"""Seedable, splittable random streams.

Every stochastic operation in this package takes an explicit
``numpy.random.Generator`` handle so that replications are independent and
reproducible.  Derived streams are obtained from integer key tuples via
``numpy.random.SeedSequence``:

    derive_rng(root, k1, k2, ...)  ==  default_rng(SeedSequence([root, k1, k2, ...]))

Distinct key tuples yield statistically independent streams, and the mapping
is stable across processes and thread schedules, which is what makes the
Monte Carlo harness deterministic under parallel execution.
"""

from __future__ import annotations

import numpy as np

RngLike = "int | np.random.Generator | np.random.SeedSequence"


def make_rng(seed) -> np.random.Generator:
    """Coerce an int seed, SeedSequence, or Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def derive_rng(root_seed: int, *key: int) -> np.random.Generator:
    """Derive an independent stream from a root seed and an integer key tuple."""
    entropy = [int(root_seed)] + [int(k) for k in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))
