"""Named, order-independent random streams.

Every stream is keyed by a tuple such as ``(experiment, condition, iteration,
purpose)``. The key is hashed into a ``SeedSequence`` spawn key and fed to a
Philox (counter-based) generator, so the numbers a task sees depend only on
the master seed and its key, never on scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seed_sequence(master_seed: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(_word(k) for k in key))


def derive_seed(master_seed: int, *key) -> int:
    """A 64-bit integer seed for ``key``; handy for manifests."""
    state = seed_sequence(master_seed, *key).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def rng(seed) -> np.random.Generator:
    """Philox generator from an int, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))
