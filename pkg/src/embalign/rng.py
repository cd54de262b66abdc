"""Reproducible random streams.

All randomness in the package flows through named substreams of a single
64-bit master seed. A substream is identified by the master seed plus a
path of labels (strings or integers). The path is folded into a 64-bit
key with SplitMix64 (string labels are first hashed with FNV-1a 64), and
the key seeds a Philox-4x64 counter-based generator. Both algorithms
are published and bit-reproducible across platforms, so any consumer
can regenerate an identical stream from (seed, path).
"""

from __future__ import annotations

import numpy as np

from .hashing import fnv1a64

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    """One SplitMix64 step: advance-and-finalize of the 64-bit state."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_key(seed: int, *path: int | str) -> int:
    """Fold ``path`` into ``seed``, yielding a 64-bit substream key.

    Each component is XOR-mixed into the running key and passed through
    SplitMix64, so distinct paths give decorrelated keys and the mapping
    is order-sensitive.
    """
    key = splitmix64(int(seed) & _MASK64)
    for part in path:
        if isinstance(part, str):
            part = fnv1a64(part.encode("utf-8"))
        key = splitmix64(key ^ (int(part) & _MASK64))
    return key


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Return the Philox generator for substream ``path`` of ``seed``."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *path)))
