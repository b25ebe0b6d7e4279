"""Deterministic seed derivation: one root seed fans out to every consumer."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(base: int, *labels) -> int:
    """Mix a base seed with string/int labels into a new 64-bit seed.

    The same (base, labels) always yields the same seed, so any component
    can be re-run in isolation and reproduce its random stream.
    """
    h = _splitmix64(int(base) & _MASK)
    for label in labels:
        if isinstance(label, int):
            h = _splitmix64(h ^ (label & _MASK))
        else:
            for byte in str(label).encode("utf-8"):
                h = _splitmix64(h ^ byte)
    return h


def generator(seed: int, *labels) -> np.random.Generator:
    """PCG64 generator seeded by derive_seed(seed, *labels)."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *labels)))
