"""Seed splitting.

Every random stream in the package is derived from one integer seed by
``numpy.random.SeedSequence(seed, spawn_key=(component_id, *indices))``.
Component ids are fixed below so that adding a new consumer never shifts
the streams of existing ones.
"""

from __future__ import annotations

import numpy as np

COMPONENTS = {
    "shape": 1,
    "pair": 2,
    "init": 3,
    "shuffle": 4,
    "em": 5,
    "split": 6,
}


def derive_rng(seed: int, component: str, *indices: int) -> np.random.Generator:
    key = (COMPONENTS[component], *(int(i) for i in indices))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
