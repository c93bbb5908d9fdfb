"""Counter-based random streams keyed by (seed, *indices).

Every stream is a Philox generator whose key is derived from the experiment
seed and a tuple of integer indices (sensor, replication, grid point, ...), so
the numbers a task sees do not depend on the order tasks are executed in.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(int(seed))


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit child seed; used where a plain integer must be recorded."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
