"""Seeded random streams.

Every random draw in the package goes through :func:`make_rng`, which builds a
Philox4x64-10 counter-based generator from a ``SeedSequence``.  A stream is
identified by the user seed plus a tuple of non-negative integer keys (for
example ``(stream_id, trial_block)``), so independent trials can be generated
in any order, or in parallel, and still reproduce bit-for-bit.

Bounded integers are drawn with ``Generator.integers``, which uses Lemire's
rejection method and therefore has no modulo bias.
"""
from __future__ import annotations

import numpy as np

# stable stream identifiers; never renumber
STREAM_CONSTRUCT = 1
STREAM_ENCODE = 2
STREAM_NOISE = 3
STREAM_LCS_MC = 4
STREAM_BMC1 = 10
STREAM_RA1 = 11
STREAM_RA2 = 12
STREAM_ROUND = 13
STREAM_SCENARIO = 14


def make_rng(seed: int | None, *keys: int) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and the sub-stream ``keys``."""
    if seed is None:
        return np.random.Generator(np.random.Philox())
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_rng(seed, *keys: int) -> np.random.Generator:
    """Accept either an existing generator or a seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(seed, *keys)
