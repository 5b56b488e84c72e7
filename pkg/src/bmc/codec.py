"""Two-phase bit-mixing codec.

Phase 1: each sender transmits a masking string drawn uniformly from the
shared set ``S``; the receiver keeps every string whose ones are at least
3/4 covered by the OR-ed observation.

Phase 2: each sender RS-encodes its CRC-framed item into ``w`` symbols and
places symbol ``i`` in the slot of its ``i``-th one.  For each decoded string
the receiver reads only slots no other decoded string uses, erases the rest,
interpolates, and keeps the result if the CRC matches.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from ._rng import STREAM_ENCODE, as_rng
from .channel import Phase2Observation
from .erasure import (
    BLANK,
    ERASED,
    DataItem,
    ErasureDecodeError,
    RsParams,
    crc_append,
    crc_check,
    rs_encode,
    rs_erasure_decode,
)
from .masking import CandidateSet, MaskingString

__all__ = [
    "MaskingChoice",
    "MaskingIndex",
    "DecodedMaskingList",
    "DataOutcome",
    "phase1_codeword",
    "encode_masking",
    "masking_scores",
    "decode_masking",
    "encode_data",
    "decode_data",
    "decode_data_detailed",
    "airtime_bytes",
]


class MaskingChoice(NamedTuple):
    index: int
    string: MaskingString
    codeword: np.ndarray


def phase1_codeword(lam: MaskingString) -> np.ndarray:
    """Boolean slots: True where a "1" is sent, False for blank."""
    return lam.to_bits()


def encode_masking(S: CandidateSet, seed=None) -> MaskingChoice:
    if len(S) == 0:
        raise ValueError("cannot draw from an empty set")
    rng = as_rng(seed, STREAM_ENCODE)
    i = int(rng.integers(0, len(S)))
    lam = S[i]
    return MaskingChoice(i, lam, phase1_codeword(lam))


class MaskingIndex:
    """Inverted index from slot to the strings having a one there.

    Scoring with the index costs O(ones(z) * |S| / 4k) instead of O(|S| w),
    which pays off when the same set is decoded many times.
    """

    def __init__(self, S: CandidateSet):
        self.size = len(S)
        flat = S.positions().ravel()
        self.order = (np.argsort(flat, kind="stable") // S.params.w).astype(np.int32)
        self.offsets = np.searchsorted(np.sort(flat), np.arange(S.params.length + 1))

    def scores(self, z: np.ndarray) -> np.ndarray:
        slots = np.flatnonzero(z)
        starts = self.offsets[slots]
        lengths = self.offsets[slots + 1] - starts
        total = int(lengths.sum())
        if total == 0:
            return np.zeros(self.size, dtype=np.int64)
        # concatenated ranges [start, start + length) for every lit slot
        shift = np.repeat(starts - np.cumsum(lengths) + lengths, lengths)
        idx = shift + np.arange(total)
        return np.bincount(self.order[idx], minlength=self.size)


def _segment_blocks(S: CandidateSet, chunk_rows: int):
    """Yield ``(row_offset, picks_by_segment)`` covering ``S``."""
    cached = S.by_segment()
    n = len(S)
    if cached is not None:
        if n:
            yield 0, cached
        return
    for a in range(0, n, chunk_rows):
        yield a, np.ascontiguousarray(S.picks[a : a + chunk_rows].T)


def _block_scores(z2d: np.ndarray, PT: np.ndarray) -> np.ndarray:
    # one gather per segment over contiguous memory
    acc = np.zeros(PT.shape[1], dtype=np.int32)
    tmp = np.empty(PT.shape[1], dtype=np.uint8)
    for j in range(PT.shape[0]):
        np.take(z2d[j], PT[j], out=tmp)
        acc += tmp
    return acc


def _block_above(z2d: np.ndarray, PT: np.ndarray, need: int, step: int = 8) -> np.ndarray:
    """Local indices of columns of ``PT`` scoring at least ``need``.

    After ``w - need + 1`` segments every string still at zero hits is out of
    reach; from there on, strings that can no longer reach ``need`` are dropped
    every ``step`` segments, so the tail of the scan touches only survivors.
    """
    w, n = PT.shape
    j0 = min(w, w - need + 1)
    acc = np.zeros(n, dtype=np.int32)
    tmp = np.empty(n, dtype=np.uint8)
    for j in range(j0):
        np.take(z2d[j], PT[j], out=tmp)
        acc += tmp
    cand = np.flatnonzero(acc + (w - j0) >= need)
    acc = acc[cand]
    j = j0
    while j < w and cand.size:
        e = min(w, j + step)
        for jj in range(j, e):
            acc += z2d[jj][PT[jj][cand]]
        j = e
        keep = acc + (w - j) >= need
        cand = cand[keep]
        acc = acc[keep]
    return cand


def _map_blocks(fn, S: CandidateSet, chunk_rows: int, workers: int) -> list:
    blocks = list(_segment_blocks(S, chunk_rows)) if workers > 1 else _segment_blocks(S, chunk_rows)
    if workers > 1:
        # split a cached block so threads have something to share
        split = []
        for a, PT in blocks:
            for b in range(0, PT.shape[1], chunk_rows):
                split.append((a + b, PT[:, b : b + chunk_rows]))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda item: (item[0], fn(item[1])), split))
    return [(a, fn(PT)) for a, PT in blocks]


def _check_observation(z: np.ndarray, S: CandidateSet) -> np.ndarray:
    z = np.asarray(z, dtype=bool)
    p = S.params
    if z.shape != (p.length,):
        raise ValueError(f"observation must have {p.length} slots, got shape {z.shape}")
    return z


def masking_scores(
    z: np.ndarray,
    S: CandidateSet,
    *,
    index: MaskingIndex | None = None,
    workers: int = 1,
    chunk_rows: int = 65536,
) -> np.ndarray:
    """Inner product of every string in ``S`` with the observation ``z``."""
    z = _check_observation(z, S)
    if index is not None:
        return index.scores(z)
    p = S.params
    z2d = z.reshape(p.w, p.segment_length).view(np.uint8)
    parts = _map_blocks(lambda PT: _block_scores(z2d, PT), S, chunk_rows, workers)
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([sc for _, sc in parts]).astype(np.int64)


@dataclass(frozen=True)
class DecodedMaskingList:
    """Strings of ``source`` accepted by the phase-1 decoder, in storage order."""

    source: CandidateSet
    indices: np.ndarray

    def __len__(self) -> int:
        return int(self.indices.size)

    def __iter__(self):
        for i in self.indices:
            yield self.source[int(i)]

    @property
    def strings(self) -> list[MaskingString]:
        return list(self)

    def positions(self) -> np.ndarray:
        return self.source.positions(self.indices)


def decode_masking(
    z: np.ndarray,
    S: CandidateSet,
    *,
    index: MaskingIndex | None = None,
    workers: int = 1,
    chunk_rows: int = 65536,
) -> DecodedMaskingList:
    """Return every string whose inner product with ``z`` is at least 3w/4."""
    z = _check_observation(z, S)
    w = S.params.w
    if index is not None:
        keep = np.flatnonzero(4 * index.scores(z) >= 3 * w)
        return DecodedMaskingList(S, keep)
    need = -(-3 * w // 4)
    z2d = z.reshape(w, S.params.segment_length).view(np.uint8)
    parts = _map_blocks(lambda PT: _block_above(z2d, PT, need), S, chunk_rows, workers)
    keep = [a + local for a, local in parts]
    keep = np.concatenate(keep).astype(np.int64) if keep else np.zeros(0, dtype=np.int64)
    return DecodedMaskingList(S, keep)


def _check_rs(lam_w: int, params: RsParams) -> None:
    if lam_w != params.w:
        raise ValueError(f"masking weight {lam_w} does not match RS length {params.w}")


def encode_data(payload: bytes, lam: MaskingString, params: RsParams) -> np.ndarray:
    """Phase-2 codeword: RS symbols at ``lam``'s ones, BLANK (-1) elsewhere."""
    _check_rs(lam.params.w, params)
    item = crc_append(payload)
    if item.size != params.d:
        raise ValueError(f"payload of {len(payload)} bytes gives a {item.size}-byte item; expected d={params.d}")
    symbols = rs_encode(item.to_bytes(), params)
    tau = np.full(lam.params.length, BLANK, dtype=np.int64)
    tau[lam.positions] = symbols
    return tau


@dataclass(frozen=True)
class DataOutcome:
    """Per-string result of phase-2 decoding."""

    index: int
    payload: bytes | None
    survivors: int
    read_collision: bool


def _as_positions(T) -> tuple[np.ndarray, list[int]]:
    if isinstance(T, DecodedMaskingList):
        return T.positions(), [int(i) for i in T.indices]
    strings = list(T)
    if not strings:
        return np.zeros((0, 0), dtype=np.int64), []
    return np.stack([s.positions for s in strings]), list(range(len(strings)))


def decode_data_detailed(z: Phase2Observation, T, params: RsParams) -> list[DataOutcome]:
    pos, labels = _as_positions(T)
    if not labels:
        return []
    if pos.shape[1] != params.w:
        raise ValueError(f"masking weight {pos.shape[1]} does not match RS length {params.w}")
    L = len(z)
    if pos.max() >= L:
        raise ValueError("observation shorter than the masking strings")
    coverage = np.bincount(pos.ravel(), minlength=L)
    outcomes = []
    for row, label in zip(pos, labels):
        exclusive = coverage[row] == 1
        received = np.where(exclusive, z.values[row], ERASED)
        read_collision = bool(np.any(z.counts[row[exclusive]] >= 2))
        payload = None
        try:
            raw = rs_erasure_decode(received, params)
        except ErasureDecodeError:
            raw = None
        if raw is not None:
            item = DataItem.from_bytes(raw[: params.d])
            if crc_check(item):
                payload = item.payload
        outcomes.append(DataOutcome(label, payload, int(exclusive.sum()), read_collision))
    return outcomes


def decode_data(z: Phase2Observation, T, params: RsParams) -> list[bytes]:
    """Payloads whose erasure decode succeeds and whose CRC matches, in ``T`` order."""
    return [o.payload for o in decode_data_detailed(z, T, params) if o.payload is not None]


def airtime_bytes(k: int, w: int, u: int) -> tuple[Fraction, int]:
    """(phase-1, phase-2) airtime in bytes: 4kw bits, then 4kw symbols of u bytes."""
    return Fraction(4 * k * w, 8), 4 * k * w * u
