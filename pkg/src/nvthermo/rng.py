"""Counter-based random streams.

Every random draw in a run comes from a Philox generator keyed by a
``SeedSequence`` whose spawn key is the path ``(probe_key, power_index,
trial_index)`` below the scenario seed. A cell's stream therefore depends only
on its coordinates, never on execution order or thread count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def make_rng(seed=None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the cell at ``path`` below ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(path))))


def label_key(label: str) -> int:
    """Stable 32-bit key for a string label (probe ids)."""
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "little")
