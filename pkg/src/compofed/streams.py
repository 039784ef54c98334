"""Deterministic counter-based random streams.

Every stochastic draw in the package comes from a Philox generator whose key
and counter encode (seed, purpose, worker, round, step).  Streams are
therefore independent of execution order: running workers sequentially, in
threads, or replaying a single (worker, round, step) in isolation all see
identical randomness.  The low counter word is left free for the generator
to advance, giving each stream 2**64 blocks of room before any collision.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Purpose tags keep subsystem streams disjoint even when the (worker, round,
# step) coordinates coincide.
_TAG_BATCH = 0xBA7C
_TAG_DATAGEN = 0xDA7A
_TAG_GENERIC = 0x6E6E


def _philox(seed: int, tag: int, a: int = 0, b: int = 0, c: int = 0) -> np.random.Generator:
    key = np.array([seed & _MASK64, tag & _MASK64], dtype=np.uint64)
    counter = np.array([0, a & _MASK64, b & _MASK64, c & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def batch_stream(seed: int, worker: int, round_index: int, step: int) -> np.random.Generator:
    """Stream that draws the mini-batch of (worker, round, step)."""
    return _philox(seed, _TAG_BATCH, worker, round_index, step)


def datagen_stream(seed: int, worker: int) -> np.random.Generator:
    """Stream that generates worker ``worker``'s synthetic dataset."""
    return _philox(seed, _TAG_DATAGEN, worker)


def generic_stream(seed: int, label: int = 0) -> np.random.Generator:
    """Free-standing stream for ad-hoc draws (estimators, tests)."""
    return _philox(seed, _TAG_GENERIC, label)
