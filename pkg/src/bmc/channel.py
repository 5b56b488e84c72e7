"""Slot-aligned OR superimposition channel.

Phase 1 slots carry either nothing or a "1"; the receiver sees 1 iff at
least one sender transmitted.  Phase 2 slots carry an RS symbol or BLANK; the
receiver sees the symbol when exactly one sender transmitted, silence when
none did, and a collision otherwise.  Collision slots also expose the bitwise
OR of the colliding symbols so that a decoder that (wrongly) reads one gets a
reproducible value.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._rng import STREAM_NOISE, as_rng
from .erasure import BLANK

__all__ = [
    "SILENT",
    "COLLISION",
    "Phase2Observation",
    "superimpose_phase1",
    "superimpose_phase2",
    "inject_bit_flips",
    "flip_slots",
]

SILENT = -3
COLLISION = -4


def _stack(codewords: Sequence[np.ndarray], n_slots: int | None, dtype) -> np.ndarray:
    if not codewords:
        if n_slots is None:
            raise ValueError("n_slots is required when there are no codewords")
        return np.empty((0, n_slots), dtype=dtype)
    lengths = {len(c) for c in codewords}
    if len(lengths) != 1 or (n_slots is not None and lengths != {n_slots}):
        raise ValueError(f"codeword length mismatch: {sorted(lengths)}")
    return np.stack([np.asarray(c, dtype=dtype) for c in codewords])


def superimpose_phase1(codewords: Sequence[np.ndarray], n_slots: int | None = None) -> np.ndarray:
    """OR of boolean phase-1 codewords (True where a "1" was sent)."""
    stacked = _stack(codewords, n_slots, bool)
    return np.any(stacked, axis=0) if stacked.shape[0] else np.zeros(stacked.shape[1], dtype=bool)


@dataclass(frozen=True)
class Phase2Observation:
    """Per-slot transmitter count and the value the receiver demodulates.

    ``values[i]`` is the unique symbol when ``counts[i] == 1``, the OR of the
    colliding symbols when ``counts[i] >= 2``, and 0 when silent.
    """

    values: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return self.values.size

    @property
    def status(self) -> np.ndarray:
        """Symbol value, SILENT, or COLLISION per slot."""
        out = self.values.copy()
        out[self.counts == 0] = SILENT
        out[self.counts >= 2] = COLLISION
        return out

    def is_collision(self, positions) -> np.ndarray:
        return self.counts[positions] >= 2


def superimpose_phase2(codewords: Sequence[np.ndarray], n_slots: int | None = None) -> Phase2Observation:
    """Combine phase-2 codewords (BLANK = -1) into the receiver's view."""
    stacked = _stack(codewords, n_slots, np.int64)
    active = stacked != BLANK
    counts = active.sum(axis=0).astype(np.int32)
    values = np.bitwise_or.reduce(np.where(active, stacked, 0), axis=0) if stacked.shape[0] else np.zeros(stacked.shape[1], dtype=np.int64)
    return Phase2Observation(values.astype(np.int64), counts)


def flip_slots(obs: np.ndarray, positions) -> np.ndarray:
    """Flip the given phase-1 slots (targeted noise)."""
    out = np.array(obs, dtype=bool, copy=True)
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size and np.unique(positions).size != positions.size:
        raise ValueError("flip positions must be distinct")
    out[positions] ^= True
    return out


def inject_bit_flips(obs: np.ndarray, flips: int, seed=None) -> np.ndarray:
    """Flip exactly ``flips`` distinct, uniformly chosen phase-1 slots."""
    obs = np.asarray(obs, dtype=bool)
    if flips < 0 or flips > obs.size:
        raise ValueError(f"flips must be in [0, {obs.size}]")
    rng = as_rng(seed, STREAM_NOISE)
    return flip_slots(obs, rng.choice(obs.size, size=flips, replace=False))
