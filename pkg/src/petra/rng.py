"""Seed derivation.

Every random stream in a run is derived from the run seed plus a string key
through a splitmix64 mix, so streams are independent of call order and
reproducible across platforms.
"""

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys) -> int:
    """Mix ``seed`` with any number of hashable-to-string keys."""
    state = splitmix64(int(seed) & _MASK)
    for key in keys:
        digest = hashlib.sha256(str(key).encode("utf-8")).digest()
        state = splitmix64(state ^ int.from_bytes(digest[:8], "little"))
    return state


def make_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))
