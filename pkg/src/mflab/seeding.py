"""Deterministic RNG stream derivation.

Replica streams are derived by advancing a splitmix64 state seeded at the
master seed by (replica_id + 1) increments and finalizing, which guarantees
replica independence and bitwise reproducibility under any parallel
schedule.  Batch-level salts fold experiment coordinates (N, order, ...)
into the master seed the same way.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def replica_seed(master_seed: int, replica_id: int) -> int:
    """splitmix of (master_seed, replica_id)."""
    state = (master_seed + (replica_id + 1) * _GOLDEN) & _MASK
    return splitmix64(state)


def batch_seed(master_seed: int, *salts: int) -> int:
    """Fold integer salts (N, order index, ...) into an independent stream."""
    s = master_seed & _MASK
    for salt in salts:
        s = splitmix64((s ^ ((salt + 1) * 0xBF58476D1CE4E5B9)) & _MASK)
    return s


def replica_rng(master_seed: int, replica_id: int) -> np.random.Generator:
    return np.random.default_rng(replica_seed(master_seed, replica_id))
