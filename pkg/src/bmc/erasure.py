"""Rate-1/2 Reed-Solomon erasure code over GF(2^(8u)) and CRC-32 framing.

The code is the evaluation form: a message of ``w/2`` symbols is read as the
coefficients of a polynomial ``p`` of degree < w/2, and the codeword is
``p`` evaluated at ``w`` fixed points ``0, 1, a, a^2, ..., a^(w-2)`` where
``a = 2`` generates the multiplicative group.  Any ``w/2`` surviving
evaluations determine ``p`` by Lagrange interpolation.

Fields: GF(256) reduced by 0x11D (u=1) and GF(65536) reduced by 0x1100B (u=2).
Within a 2-byte symbol the byte order is big-endian.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "BLANK",
    "ERASED",
    "GaloisField",
    "gf",
    "RsParams",
    "DataItem",
    "ErasureDecodeError",
    "choose_wu",
    "evaluation_points",
    "rs_encode",
    "rs_erasure_decode",
    "crc32",
    "crc_append",
    "crc_check",
]

BLANK = -1
ERASED = -2

_POLY = {1: 0x11D, 2: 0x1100B}
CRC_BYTES = 4


class ErasureDecodeError(ValueError):
    """Too few surviving symbols to interpolate."""


class GaloisField:
    """GF(2^bits) with exp/log tables; all ops accept numpy arrays."""

    def __init__(self, bits: int, poly: int):
        self.bits = bits
        self.poly = poly
        self.order = 1 << bits
        q1 = self.order - 1
        exp = np.zeros(2 * q1, dtype=np.int64)
        log = np.zeros(self.order, dtype=np.int64)
        x = 1
        for i in range(q1):
            exp[i] = x
            log[x] = i
            x <<= 1
            if x & self.order:
                x ^= poly
        if x != 1:
            raise ValueError(f"0x{poly:X} is not primitive for GF(2^{bits})")
        exp[q1:] = exp[:q1]
        exp.flags.writeable = False
        log.flags.writeable = False
        self.exp = exp
        self.log = log
        self.table = None
        if bits <= 8:
            # full product table; one gather per multiplication
            ai, bi = np.meshgrid(np.arange(self.order), np.arange(self.order), indexing="ij")
            table = exp[(log[ai] + log[bi])]
            table[(ai == 0) | (bi == 0)] = 0
            table.flags.writeable = False
            self.table = table

    def mul(self, a, b):
        if self.table is not None:
            return self.table[a, b]
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        r = self.exp[self.log[a] + self.log[b]]
        return np.where((a == 0) | (b == 0), 0, r)

    def inv(self, a):
        a = np.asarray(a, dtype=np.int64)
        if np.any(a == 0):
            raise ZeroDivisionError("zero has no inverse")
        return self.exp[(self.order - 1 - self.log[a]) % (self.order - 1)]

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    def power(self, a, n: int):
        a = np.asarray(a, dtype=np.int64)
        if n == 0:
            return np.ones_like(a)
        r = self.exp[(self.log[a] * n) % (self.order - 1)]
        return np.where(a == 0, 0, r)


@lru_cache(maxsize=None)
def gf(u: int) -> GaloisField:
    if u not in _POLY:
        raise ValueError(f"unsupported RS symbol size u={u} (supported: 1, 2)")
    return GaloisField(8 * u, _POLY[u])


def choose_wu(d: int) -> tuple[int, int]:
    """Smallest symbol size ``u`` (then smallest even ``w``) with 2d <= w*u and w <= 2^(8u) - 1."""
    if d < 1:
        raise ValueError("d must be >= 1")
    u = 1
    while True:
        w = 2 * (-(-d // u))
        if w <= (1 << (8 * u)) - 1:
            break
        u += 1
    if u not in _POLY:
        raise ValueError(f"d={d} needs RS symbol size u={u}; only u in (1, 2) is supported")
    return w, u


@dataclass(frozen=True)
class RsParams:
    """Codeword length ``w`` (even), symbol size ``u`` bytes, and data item size ``d`` bytes."""

    w: int
    u: int = 1
    d: int | None = None

    def __post_init__(self):
        if self.u not in _POLY:
            raise ValueError(f"unsupported RS symbol size u={self.u}")
        if self.w < 2 or self.w % 2:
            raise ValueError(f"w must be a positive even integer, got {self.w}")
        if self.w > (1 << (8 * self.u)) - 1:
            raise ValueError(f"w={self.w} exceeds field limit {(1 << (8 * self.u)) - 1}")
        if self.d is None:
            object.__setattr__(self, "d", self.capacity)
        if not (1 <= self.d <= self.capacity):
            raise ValueError(f"item size d={self.d} does not fit {self.capacity} message bytes")

    @classmethod
    def for_item_size(cls, d: int) -> "RsParams":
        w, u = choose_wu(d)
        return cls(w, u, d)

    @property
    def message_symbols(self) -> int:
        return self.w // 2

    @property
    def capacity(self) -> int:
        """Message bytes carried by one codeword."""
        return self.message_symbols * self.u


@lru_cache(maxsize=None)
def evaluation_points(u: int, w: int) -> np.ndarray:
    """The ``w`` public evaluation points: 0 followed by 1, a, a^2, ..."""
    field = gf(u)
    if w > field.order:
        raise ValueError("not enough distinct field elements")
    pts = np.empty(w, dtype=np.int64)
    pts[0] = 0
    pts[1:] = field.exp[: w - 1]
    pts.flags.writeable = False
    return pts


def _bytes_to_symbols(data: bytes, u: int, n_symbols: int) -> np.ndarray:
    buf = np.frombuffer(data.ljust(n_symbols * u, b"\0"), dtype=np.uint8).astype(np.int64)
    if u == 1:
        return buf
    return (buf[0::2] << 8) | buf[1::2]


def _symbols_to_bytes(symbols: np.ndarray, u: int) -> bytes:
    symbols = np.asarray(symbols, dtype=np.int64)
    if u == 1:
        return symbols.astype(np.uint8).tobytes()
    out = np.empty(2 * symbols.size, dtype=np.uint8)
    out[0::2] = symbols >> 8
    out[1::2] = symbols & 0xFF
    return out.tobytes()


def rs_encode(message: bytes, params: RsParams) -> np.ndarray:
    """Evaluate the (zero-padded) message polynomial at the ``w`` public points."""
    message = bytes(message)
    if len(message) > params.capacity:
        raise ValueError(f"message of {len(message)} bytes exceeds capacity {params.capacity}")
    field = gf(params.u)
    coeffs = _bytes_to_symbols(message, params.u, params.message_symbols)
    x = evaluation_points(params.u, params.w)
    acc = np.zeros(params.w, dtype=np.int64)
    for c in coeffs[::-1]:
        acc = field.mul(acc, x) ^ c
    return acc


def _basis_matrix(field: GaloisField, xs: np.ndarray) -> np.ndarray:
    """``W[c, i]``: coefficient of x^c in the Lagrange basis polynomial of point ``xs[i]``.

    The interpolating polynomial through ``(xs[i], ys[i])`` then has
    coefficients ``c -> XOR_i W[c, i] * ys[i]``.
    """
    K = xs.size
    # master polynomial M(x) = prod (x - x_i), coefficients low degree first
    M = np.zeros(K + 1, dtype=np.int64)
    M[0] = 1
    for xi in xs:
        shifted = np.concatenate(([0], M[:-1]))
        M = shifted ^ field.mul(M, xi)
    # denominators prod_{j != i} (x_i - x_j), summed in the log domain
    diff = xs[:, None] ^ xs[None, :]
    np.fill_diagonal(diff, 1)
    q1 = field.order - 1
    inv_den = field.exp[(-field.log[diff].sum(axis=1)) % q1]
    # synthetic division of M by (x - x_i) for all i at once
    W = np.empty((K, K), dtype=np.int64)
    q = np.ones(K, dtype=np.int64)  # leading coefficient of every quotient
    W[K - 1] = inv_den
    for j in range(K - 1, 0, -1):
        q = M[j] ^ field.mul(xs, q)
        W[j - 1] = field.mul(q, inv_den)
    W.flags.writeable = False
    return W


# erasure patterns repeat a lot in simulation; small codes cache the basis
_BASIS_CACHE_MAX_K = 128


@lru_cache(maxsize=256)
def _cached_basis(u: int, w: int, use: bytes) -> np.ndarray:
    idx = np.frombuffer(use, dtype=np.int64)
    return _basis_matrix(gf(u), evaluation_points(u, w)[idx])


def _interpolate(field: GaloisField, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Coefficients (low degree first) of the unique polynomial of degree < len(xs) through the points.

    Streams over the quotient polynomials so memory stays O(len(xs)).
    """
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    K = xs.size
    M = np.zeros(K + 1, dtype=np.int64)
    M[0] = 1
    for xi in xs:
        shifted = np.concatenate(([0], M[:-1]))
        M = shifted ^ field.mul(M, xi)
    log_den = np.zeros(K, dtype=np.int64)
    for j in range(K):
        diff = xs ^ xs[j]
        diff[j] = 1
        log_den += field.log[diff]
    q1 = field.order - 1
    scale = np.where(ys == 0, 0, field.exp[(field.log[ys] - log_den) % q1])
    coeffs = np.zeros(K, dtype=np.int64)
    q = np.ones(K, dtype=np.int64)
    coeffs[K - 1] = np.bitwise_xor.reduce(scale)
    for j in range(K - 1, 0, -1):
        q = M[j] ^ field.mul(xs, q)
        coeffs[j - 1] = np.bitwise_xor.reduce(field.mul(scale, q))
    return coeffs


def rs_erasure_decode(received, params: RsParams) -> bytes:
    """Recover the message bytes from a codeword with ERASED markers.

    Uses the first ``w/2`` surviving positions.  Erasures only: a corrupted
    survivor yields a wrong message, which the CRC is expected to catch.
    """
    received = np.asarray(received, dtype=np.int64)
    if received.shape != (params.w,):
        raise ValueError(f"expected {params.w} symbols, got shape {received.shape}")
    if np.any(received == BLANK):
        raise ValueError("BLANK symbols cannot appear in decoder input")
    K = params.message_symbols
    alive = np.flatnonzero(received != ERASED)
    if alive.size < K:
        raise ErasureDecodeError(f"only {alive.size} of {params.w} symbols survive; need {K}")
    field = gf(params.u)
    if np.any((received[alive] < 0) | (received[alive] >= field.order)):
        raise ValueError("symbol values out of field range")
    use = alive[:K].astype(np.int64)
    if K <= _BASIS_CACHE_MAX_K:
        W = _cached_basis(params.u, params.w, use.tobytes())
        coeffs = np.bitwise_xor.reduce(field.mul(W, received[use][None, :]), axis=1)
    else:
        coeffs = _interpolate(field, evaluation_points(params.u, params.w)[use], received[use])
    return _symbols_to_bytes(coeffs, params.u)


def crc32(data: bytes) -> int:
    """Standard CRC-32 (reflected 0x04C11DB7, init and final xor 0xFFFFFFFF)."""
    return zlib.crc32(data) & 0xFFFFFFFF


@dataclass(frozen=True)
class DataItem:
    payload: bytes
    crc: int

    @property
    def size(self) -> int:
        return len(self.payload) + CRC_BYTES

    def to_bytes(self) -> bytes:
        return self.payload + self.crc.to_bytes(CRC_BYTES, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> "DataItem":
        if len(data) < CRC_BYTES:
            raise ValueError("data item shorter than its CRC")
        return cls(bytes(data[:-CRC_BYTES]), int.from_bytes(data[-CRC_BYTES:], "big"))


def crc_append(payload: bytes) -> DataItem:
    payload = bytes(payload)
    return DataItem(payload, crc32(payload))


def crc_check(item: DataItem) -> bool:
    return crc32(item.payload) == item.crc
