"""Seeded random streams.

All randomness is derived from one 64-bit seed. Each subsystem draws from
its own Philox stream, keyed by a fixed stream id, so adding draws in one
place never shifts the numbers seen elsewhere.

Stream table:

    ==  =================  ==========================================
    id  name               consumer
    ==  =================  ==========================================
    1   rff                random Fourier frequencies
    2   coreset_p          coreset / sampling of the first set
    3   coreset_q          coreset / sampling of the second set
    4   discretize         reduce.sample_discretize
    5   bench              benchmark instance generation
    6   trial              test and experiment instance generation
    ==  =================  ==========================================
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError

STREAMS = {
    "rff": 1,
    "coreset_p": 2,
    "coreset_q": 3,
    "discretize": 4,
    "bench": 5,
    "trial": 6,
}

SEED_MAX = 2**64 - 1


def check_seed(seed) -> int:
    """Validate and normalize a seed to a Python int in [0, 2**64)."""
    try:
        s = int(seed)
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError(f"seed must be an integer, got {seed!r}") from exc
    if s != seed or s < 0 or s > SEED_MAX:
        raise InvalidParameterError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return s


def generator(seed: int, stream: str, *substream: int) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, stream, *substream)``.

    Args:
        seed: master seed.
        stream: key of ``STREAMS``.
        *substream: optional extra non-negative integers (e.g. trial index).

    Returns:
        A fresh ``numpy.random.Generator``.
    """
    if stream not in STREAMS:
        raise KeyError(f"unknown random stream {stream!r}")
    key = (STREAMS[stream],) + tuple(int(s) for s in substream)
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
