"""Deterministic seed splitting for replicated Monte Carlo runs.

Every replica draws from its own PCG64 stream whose seed is derived from
``(seed, stream)`` with the SplitMix64 finaliser (constants from Steele,
Lea & Flood, 2014).  Derived seeds depend only on the pair, never on
execution order, so replicas can run in any order or in parallel.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def _finalize(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64(seed: int, stream: int) -> int:
    """Return the 64-bit seed of sub-stream ``stream`` of ``seed``."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    z = (_finalize(seed & MASK64) + (stream + 1) * GOLDEN_GAMMA) & MASK64
    return _finalize(z)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & MASK64))


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return make_rng(mix64(seed, stream))
