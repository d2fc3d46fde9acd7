"""Seed derivation.

Every random draw in the library comes from a :class:`numpy.random.Generator`
built by :func:`derive`. A stream is identified by the master seed, a
component name and a tuple of integer indices (tree number, bag number,
iteration, ...). The component name is hashed with CRC-32 so the mapping is
stable across interpreter runs, and the pair ``(crc32(name), *indices)`` is
used as the ``spawn_key`` of a :class:`numpy.random.SeedSequence`. Streams
therefore never depend on scheduling or on the number of worker threads.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

THREADS_ENV = "GPCITR_NUM_THREADS"


def seed_sequence(seed: int, component: str, *index: int) -> np.random.SeedSequence:
    key = (zlib.crc32(component.encode("utf-8")),) + tuple(int(i) for i in index)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def derive(seed: int, component: str, *index: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, component, *index)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, component, *index)))


def derive_int(seed: int, component: str, *index: int) -> int:
    """Return a 63-bit integer seed for the given stream."""
    state = seed_sequence(seed, component, *index).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def thread_count(default: int | None = None) -> int:
    """Worker count honoring the ``GPCITR_NUM_THREADS`` override."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            value = 0
        if value >= 1:
            return value
    if default is not None:
        return max(1, default)
    return max(1, os.cpu_count() or 1)
