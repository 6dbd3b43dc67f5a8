"""Deterministic stream splitting.

Every stochastic stage derives its generator from a master seed plus a
structured key, so results do not depend on execution order and any
single piece of work can be replayed in isolation.
"""
from __future__ import annotations

import numpy as np


def child_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Derive an independent seed for the work unit identified by ``key``."""
    return np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))


def rng_for(master: int, *key: int) -> np.random.Generator:
    """Generator for the work unit identified by ``key``."""
    return np.random.default_rng(child_seed(master, *key))
