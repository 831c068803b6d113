"""Seed plumbing.

Every random stream is derived from a master seed through
``numpy.random.SeedSequence`` spawn keys, so streams for different paths,
time slices or replications never overlap and do not depend on how work is
scheduled.
"""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np


def generator(seed: Optional[int], *key: int) -> np.random.Generator:
    """Generator for the sub-stream ``key`` of ``seed``."""
    if seed is None:
        return np.random.default_rng()
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: Optional[int], *key: int) -> Optional[int]:
    """Integer seed for a sub-stream; handy when a seed must be recorded."""
    if seed is None:
        return None
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def block_generators(seed: Optional[int], n: int, block: int, *key: int) -> Iterator[tuple[slice, np.random.Generator]]:
    """Yield ``(slice, generator)`` for consecutive blocks of ``n`` items."""
    for b, start in enumerate(range(0, n, block)):
        yield slice(start, min(n, start + block)), generator(seed, *key, b)
