"""Deterministic random streams.

Every stochastic routine draws from a counter-based Philox stream keyed by
``(seed, task id, chunk index)``.  Work is split into fixed-size chunks of
replicas; each chunk owns an independent stream, so results do not depend
on how chunks are scheduled across workers.  The compiled kernel lane and
the numpy fallback lane consume their streams in different orders (scalar
per replica vs. vectorised per step) and are therefore deterministic per
lane but not bit-identical to each other.
"""
from __future__ import annotations

import numpy as np

# Stable task identifiers; part of the reproducibility contract.
TASK_FOREST = 1
TASK_BC_EDGES = 2
TASK_STATIONARY = 3
TASK_PERIODIC = 4
TASK_BD_PAIR = 5
TASK_WEB_EVENTS = 6
TASK_TREE_GAUSS = 7
TASK_TREE_POISSON = 8
TASK_LINE_POISSON = 9
TASK_GENERIC = 10
TASK_BETA_BD = 11

#: replicas per RNG chunk (fixed; changing it changes sampled values)
CHUNK = 8192


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator for ``(seed, *key)``."""
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF,) + tuple(int(k) & 0xFFFFFFFF for k in key)
    return np.random.Generator(np.random.Philox(seed=np.random.SeedSequence(entropy=entropy)))


def chunked(n: int, chunk: int = CHUNK):
    """Yield ``(chunk_index, size)`` pairs covering ``n`` replicas."""
    i = 0
    idx = 0
    while i < n:
        size = min(chunk, n - i)
        yield idx, size
        i += size
        idx += 1
