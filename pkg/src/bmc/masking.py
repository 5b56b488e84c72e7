"""Masking strings, low collision sets, and the promising-set check.

A ``(k, w)`` masking string is ``w`` segments of ``4k`` bits each, with exactly
one "1" per segment.  It is stored as the ``w`` segment-local indices of those
ones ("picks"), which makes an inner product a count of equal picks.

A :class:`CandidateSet` holds many strings as a 2-D ``picks`` array of shape
``(size, w)``.  Random construction, the deterministic promising-set check,
extension to ``c * w``, and a Monte Carlo estimate of the LCS failure
probability all operate on that array.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import islice
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.stats import binomtest

from ._rng import STREAM_CONSTRUCT, STREAM_LCS_MC, as_rng, make_rng

__all__ = [
    "MaskingParams",
    "MaskingString",
    "CandidateSet",
    "PromisingFailure",
    "PromisingDiagnostics",
    "LcsEstimate",
    "inner_product",
    "is_compatible",
    "construct_candidate_set",
    "lcs_size",
    "theoretical_w",
    "check_promising",
    "gram_matrix",
    "extend_string",
    "extend_lcs",
    "monte_carlo_lcs_check",
    "monte_carlo_lcs_sweep",
    "write_lcs",
    "read_lcs",
    "footprint_bits",
]


@dataclass(frozen=True)
class MaskingParams:
    k: int
    w: int
    delta: float = 1.0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if int(self.w) != self.w or self.w < 1:
            raise ValueError(f"w must be a positive integer, got {self.w!r}")
        if not (0.0 < self.delta <= 1.0):
            raise ValueError(f"delta must be in (0, 1], got {self.delta!r}")

    @property
    def segment_length(self) -> int:
        return 4 * self.k

    @property
    def length(self) -> int:
        """Total string length in bits (slots)."""
        return 4 * self.k * self.w

    @property
    def pick_dtype(self) -> np.dtype:
        return np.dtype(np.uint8) if self.segment_length <= 256 else np.dtype(np.uint16)


@dataclass(frozen=True)
class MaskingString:
    params: MaskingParams
    picks: tuple[int, ...]

    def __post_init__(self):
        picks = tuple(int(p) for p in self.picks)
        object.__setattr__(self, "picks", picks)
        if len(picks) != self.params.w:
            raise ValueError(f"expected {self.params.w} picks, got {len(picks)}")
        seg = self.params.segment_length
        if any(p < 0 or p >= seg for p in picks):
            raise ValueError(f"picks must lie in [0, {seg})")

    @property
    def positions(self) -> np.ndarray:
        """Slot indices of the ones, in increasing order."""
        seg = self.params.segment_length
        return np.arange(self.params.w, dtype=np.int64) * seg + np.asarray(self.picks, dtype=np.int64)

    def to_bits(self) -> np.ndarray:
        bits = np.zeros(self.params.length, dtype=bool)
        bits[self.positions] = True
        return bits

    @classmethod
    def from_bits(cls, bits, params: MaskingParams) -> "MaskingString":
        bits = np.asarray(bits, dtype=bool)
        if bits.shape != (params.length,):
            raise ValueError(f"expected {params.length} bits, got shape {bits.shape}")
        segs = bits.reshape(params.w, params.segment_length)
        if not np.all(segs.sum(axis=1) == 1):
            raise ValueError("every segment must hold exactly one '1'")
        return cls(params, tuple(np.argmax(segs, axis=1)))


@dataclass
class CandidateSet:
    """A multiset of masking strings sharing one parameter set.

    ``picks[i, j]`` is the pick of string ``i`` in segment ``j``.  ``verified``
    is set only by :func:`check_promising` (or inherited through
    :func:`extend_lcs`).
    """

    params: MaskingParams
    picks: np.ndarray
    verified: bool = False
    seed: int | None = None
    _positions: np.ndarray | None = field(default=None, repr=False, compare=False)
    _by_segment: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        picks = np.asarray(self.picks)
        if picks.ndim != 2 or picks.shape[1] != self.params.w:
            raise ValueError(f"picks must have shape (n, {self.params.w}), got {picks.shape}")
        if picks.size and (picks.min() < 0 or picks.max() >= self.params.segment_length):
            raise ValueError(f"picks must lie in [0, {self.params.segment_length})")
        self.picks = np.ascontiguousarray(picks, dtype=self.params.pick_dtype)

    def __len__(self) -> int:
        return self.picks.shape[0]

    def __getitem__(self, i: int) -> MaskingString:
        return MaskingString(self.params, tuple(self.picks[i].tolist()))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_strings(cls, strings: Sequence[MaskingString], params: MaskingParams | None = None) -> "CandidateSet":
        if not strings and params is None:
            raise ValueError("cannot infer params from an empty sequence")
        params = params or strings[0].params
        for s in strings:
            if s.params != params:
                raise ValueError("all strings must share params")
        picks = np.array([s.picks for s in strings], dtype=params.pick_dtype).reshape(len(strings), params.w)
        return cls(params, picks)

    def positions(self, rows=None) -> np.ndarray:
        """Flat slot indices of the ones, shape ``(n, w)`` (or for ``rows``)."""
        seg = self.params.segment_length
        offsets = np.arange(self.params.w, dtype=np.int64) * seg
        if rows is not None:
            return self.picks[rows].astype(np.int64) + offsets
        if self._positions is None:
            self._positions = self.picks.astype(np.int64) + offsets
        return self._positions

    def by_segment(self, cache_limit: int = 256 << 20) -> np.ndarray | None:
        """Segment-major copy of the picks, shape ``(w, n)``, cached.

        Returns None when the copy would exceed ``cache_limit`` bytes; callers
        then transpose chunk by chunk.
        """
        if self._by_segment is None:
            if self.picks.nbytes > cache_limit:
                return None
            self._by_segment = np.ascontiguousarray(self.picks.T)
        return self._by_segment

    def nbytes(self) -> int:
        return self.picks.nbytes


def _check_same(a: MaskingParams, b: MaskingParams) -> None:
    if a != b:
        raise ValueError(f"parameter mismatch: {a} vs {b}")


def inner_product(a: MaskingString, b: MaskingString) -> int:
    """Number of segments in which ``a`` and ``b`` place their one at the same bit."""
    _check_same(a.params, b.params)
    return sum(1 for x, y in zip(a.picks, b.picks) if x == y)


def is_compatible(lam: MaskingString, others: Iterable[MaskingString]) -> bool:
    """True iff the summed inner products of ``lam`` with ``others`` is at most w/2."""
    total = 0
    for t in others:
        total += inner_product(lam, t)
    return 2 * total <= lam.params.w


def lcs_size(k: int, delta: float) -> int:
    """Set size ``2k / delta``, rounded up (tolerating float noise)."""
    return int(math.ceil(2 * k / delta - 1e-9))


def construct_candidate_set(params: MaskingParams, size: int, seed=None) -> CandidateSet:
    """Draw ``size`` strings, each segment's one placed uniformly at random."""
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = as_rng(seed, STREAM_CONSTRUCT)
    picks = rng.integers(0, params.segment_length, size=(size, params.w), dtype=params.pick_dtype)
    return CandidateSet(params, picks, verified=False, seed=seed if isinstance(seed, int) else None)


def theoretical_w(k: int, delta: float) -> int:
    """Weight for which random sets are provably promising: ceil(20 ln(k/delta) ln(2k/delta^2))."""
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if delta > 0.02:
        warnings.warn(f"delta={delta} exceeds 0.02; the weight guarantee does not apply", stacklevel=2)
    if k < 6 * math.log(2 * k / delta**2):
        warnings.warn(
            f"k={k} is below 6 ln(2k/delta^2)={6 * math.log(2 * k / delta**2):.1f}; "
            "the construction guarantee does not apply",
            stacklevel=2,
        )
    return int(math.ceil(20 * math.log(k / delta) * math.log(2 * k / delta**2)))


def _one_hot(S: CandidateSet) -> sparse.csr_matrix:
    n, w = S.picks.shape
    cols = S.positions().ravel()
    indptr = np.arange(0, n * w + 1, w, dtype=np.int64)
    data = np.ones(n * w, dtype=np.int32)
    return sparse.csr_matrix((data, cols, indptr), shape=(n, S.params.length))


def _row_blocks(n: int, block_rows: int):
    for a in range(0, n, block_rows):
        yield a, min(n, a + block_rows)


def _default_block_rows(n: int) -> int:
    # keep each dense (block x n) Gram slab near 16M entries
    return max(1, min(n, 16_000_000 // max(n, 1)))


def gram_matrix(S: CandidateSet, rows: slice | None = None) -> np.ndarray:
    """Dense matrix of pairwise inner products (optionally a row slab)."""
    X = _one_hot(S)
    left = X if rows is None else X[rows]
    return np.asarray((left @ X.T).toarray(), dtype=np.int64)


@dataclass(frozen=True)
class PromisingFailure:
    """String ``index`` broke ``check`` (see CHECK_NAMES); ``partner`` is set for the max-deviation check."""

    index: int
    check: int
    partner: int | None = None


CHECK_NAMES = {1: "mean collisions", 2: "max deviation", 3: "squared deviation"}


@dataclass
class PromisingDiagnostics:
    """Per-string statistics of the promising-set check.

    Quantities are kept as exact integers scaled by ``n - 1`` (``n = |S|``):

    * ``row_sums[i]``    = sum over j != i of S[i].S[j], so mean = row_sums / (n-1)
    * ``max_dev_scaled`` = max over j != i of |(n-1) S[i].S[j] - row_sums[i]|
    * ``sq_dev_scaled``  = (n-1) * sum over j != i of (S[i].S[j] - mean)^2
    """

    params: MaskingParams
    size: int
    row_sums: np.ndarray
    max_dev_scaled: np.ndarray
    max_dev_partner: np.ndarray
    sq_dev_scaled: np.ndarray
    failures: list[PromisingFailure]
    bound_max_dev: float
    bound_sq_dev: float
    theoretical_w: int | None

    @property
    def is_promising(self) -> bool:
        return not self.failures

    @property
    def means(self) -> np.ndarray:
        return self.row_sums / (self.size - 1)

    def mean(self, i: int) -> Fraction:
        return Fraction(int(self.row_sums[i]), self.size - 1)

    @property
    def max_deviation(self) -> np.ndarray:
        return self.max_dev_scaled / (self.size - 1)

    @property
    def sq_deviation(self) -> np.ndarray:
        return self.sq_dev_scaled / (self.size - 1)

    def failing_checks(self) -> set[int]:
        return {f.check for f in self.failures}

    def summary(self) -> str:
        p = self.params
        lines = [
            f"k={p.k} w={p.w} delta={p.delta} size={self.size}",
            f"mean collisions: min={self.means.min():.4f} max={self.means.max():.4f} "
            f"(target {p.w / (4 * p.k):.4f} +/- {0.04 * p.w / (4 * p.k):.4f})",
            f"max deviation: {self.max_deviation.max():.3f} (bound {self.bound_max_dev:.3f})",
            f"squared deviation per partner: {self.sq_deviation.max() / (self.size - 1):.3f} "
            f"(bound {self.bound_sq_dev:.3f})",
        ]
        if self.theoretical_w is not None and p.w < self.theoretical_w:
            lines.append(f"note: w={p.w} is below the proven weight {self.theoretical_w}")
        lines.append(f"promising set: {'yes' if self.is_promising else 'no'}")
        for c in sorted(self.failing_checks()):
            n_bad = sum(1 for f in self.failures if f.check == c)
            lines.append(f"  check {c} ({CHECK_NAMES[c]}) violated by {n_bad} string(s)")
        return "\n".join(lines)


def _promising_block(X, a: int, b: int, w: int):
    G = np.asarray((X[a:b] @ X.T).toarray(), dtype=np.int64)
    idx = np.arange(a, b)
    G[idx - a, idx] = 0  # drop self terms (index-based; duplicates stay in)
    n = G.shape[1]
    row_sums = G.sum(axis=1)
    sq = (G * G).sum(axis=1)
    dev = np.abs((n - 1) * G - row_sums[:, None])
    dev[idx - a, idx] = -1
    partner = dev.argmax(axis=1)
    max_dev = dev[np.arange(b - a), partner]
    sq_scaled = (n - 1) * sq - row_sums * row_sums
    return row_sums, max_dev, partner, sq_scaled


def check_promising(S: CandidateSet, *, workers: int = 1, block_rows: int | None = None) -> PromisingDiagnostics:
    """Check the three promising-set inequalities for every string of ``S``.

    Cost is Theta(|S|^2 w).  Sets ``S.verified`` to the outcome.  Row blocks can
    be evaluated by ``workers`` threads; aggregation order is fixed, so the
    result does not depend on the worker count.
    """
    n = len(S)
    if n < 2:
        raise ValueError("check_promising needs at least two strings")
    p = S.params
    k, w, delta = p.k, p.w, p.delta
    X = _one_hot(S)
    block_rows = block_rows or _default_block_rows(n)
    blocks = list(_row_blocks(n, block_rows))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: _promising_block(X, ab[0], ab[1], w), blocks))
    else:
        parts = [_promising_block(X, a, b, w) for a, b in blocks]
    row_sums = np.concatenate([q[0] for q in parts])
    max_dev = np.concatenate([q[1] for q in parts])
    partner = np.concatenate([q[2] for q in parts])
    sq_scaled = np.concatenate([q[3] for q in parts])

    log_term = math.log(k / delta)
    bound2 = 4 * log_term
    bound3 = (w / (5 * k)) * log_term
    # mean check in integers: |100k*row_sum - 25(n-1)w| < (n-1)w
    mean_ok = np.abs(100 * k * row_sums - 25 * (n - 1) * w) < (n - 1) * w
    dev_ok = max_dev < bound2 * (n - 1)
    sq_ok = sq_scaled < bound3 * (n - 1) * (n - 1)

    failures = []
    for i in np.flatnonzero(~(mean_ok & dev_ok & sq_ok)):
        if not mean_ok[i]:
            failures.append(PromisingFailure(int(i), 1))
        if not dev_ok[i]:
            failures.append(PromisingFailure(int(i), 2, int(partner[i])))
        if not sq_ok[i]:
            failures.append(PromisingFailure(int(i), 3))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tw = theoretical_w(k, delta) if delta < 1 else None
    except ValueError:
        tw = None

    diag = PromisingDiagnostics(
        params=p,
        size=n,
        row_sums=row_sums,
        max_dev_scaled=max_dev,
        max_dev_partner=partner,
        sq_dev_scaled=sq_scaled,
        failures=failures,
        bound_max_dev=bound2,
        bound_sq_dev=bound3,
        theoretical_w=tw,
    )
    S.verified = diag.is_promising
    return diag


def extend_string(s: MaskingString, c: int) -> MaskingString:
    if c < 1:
        raise ValueError("c must be >= 1")
    p = s.params
    return MaskingString(MaskingParams(p.k, p.w * c, p.delta), s.picks * c)


def extend_lcs(S: CandidateSet, c: int) -> CandidateSet:
    """Repeat every string ``c`` times; inner products scale by ``c``."""
    if c < 1:
        raise ValueError("c must be >= 1")
    p = S.params
    params = MaskingParams(p.k, p.w * c, p.delta)
    return CandidateSet(params, np.tile(S.picks, (1, c)), verified=S.verified, seed=S.seed)


@dataclass(frozen=True)
class LcsEstimate:
    """Violation counts for the two LCS conditions at one ``m``."""

    m: int
    trials: int
    cond1_violations: int
    cond2_violations: int
    violations: int
    ci_low: float
    ci_high: float

    @property
    def rate(self) -> float:
        return self.violations / self.trials


def _value_ids(S: CandidateSet) -> np.ndarray:
    _, ids = np.unique(S.picks, axis=0, return_inverse=True)
    return ids.ravel()


def _mc_block_gram(G, ids, w, m, n_trials, rng, chunk: int = 64):
    n = G.shape[0]
    T = rng.integers(0, n, size=(n_trials, m))
    i_sel = rng.integers(0, m, size=n_trials)
    c1 = np.zeros(n_trials, dtype=bool)
    for a in range(0, n_trials, chunk):
        cols = T[a : a + chunk]
        b = cols.shape[0]
        # G is symmetric: gather rows (contiguous) instead of columns
        sums = G[cols.ravel()].reshape(b, m, n).sum(axis=1)
        tr, j = np.nonzero(2 * sums > w)
        if tr.size:
            exempt = (ids[cols[tr]] == ids[j][:, None]).any(axis=1)
            bad = np.unique(tr[~exempt])
            c1[a + bad] = True
    ti = T[np.arange(n_trials), i_sel]
    own = G[ti[:, None], T].sum(axis=1) - G[ti, ti]
    c2 = 2 * own > w
    return c1, c2


def _mc_block_direct(S: CandidateSet, ids, m, n_trials, rng):
    n = len(S)
    p = S.params
    w, seg = p.w, p.segment_length
    picks = S.picks
    rows = np.arange(w)
    T = rng.integers(0, n, size=(n_trials, m))
    i_sel = rng.integers(0, m, size=n_trials)
    c1 = np.zeros(n_trials, dtype=bool)
    c2 = np.zeros(n_trials, dtype=bool)
    for t in range(n_trials):
        cols = T[t]
        counts = np.zeros((w, seg), dtype=np.int32)
        np.add.at(counts, (np.broadcast_to(rows, (m, w)), picks[cols].astype(np.intp)), 1)
        sums = counts[rows, picks].sum(axis=1)
        in_T = np.isin(ids, ids[cols])
        c1[t] = bool(np.any((2 * sums > w) & ~in_T))
        ti = picks[cols[i_sel[t]]]
        rest = picks[np.delete(cols, i_sel[t])]
        c2[t] = 2 * int((rest == ti).sum()) > w
    return c1, c2


def monte_carlo_lcs_check(
    S: CandidateSet,
    m: int,
    trials: int,
    seed=None,
    *,
    method: str = "auto",
    block_trials: int = 1000,
    workers: int = 1,
    gram: np.ndarray | None = None,
) -> LcsEstimate:
    """Estimate how often a random draw of ``m`` strings violates an LCS condition.

    Each trial draws ``m`` strings with replacement and a uniform index ``i``.
    Condition 1 fails when some string outside the draw has summed inner
    product above w/2 with the draw; condition 2 fails when the draw minus
    ``t_i`` has summed inner product above w/2 with ``t_i``.

    ``method="gram"`` precomputes all pairwise inner products (fast per trial,
    O(|S|^2) memory); ``"direct"`` recomputes per trial in O(|S| w).
    """
    n = len(S)
    if n < 1:
        raise ValueError("S is empty")
    if not (1 <= m <= S.params.k):
        raise ValueError(f"m must be in [1, {S.params.k}]")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if method == "auto":
        method = "gram" if n * n <= 25_000_000 else "direct"
    if method not in ("gram", "direct"):
        raise ValueError(f"unknown method {method!r}")
    ids = _value_ids(S)
    w = S.params.w
    if method == "gram" and gram is None:
        gram = gram_matrix(S)

    blocks = [(b, min(block_trials, trials - b * block_trials)) for b in range((trials + block_trials - 1) // block_trials)]

    def run(block):
        b, size = block
        rng = make_rng(seed, STREAM_LCS_MC, m, b)
        if method == "gram":
            return _mc_block_gram(gram, ids, w, m, size, rng)
        return _mc_block_direct(S, ids, m, size, rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    c1 = np.concatenate([q[0] for q in parts])
    c2 = np.concatenate([q[1] for q in parts])
    viol = int(np.count_nonzero(c1 | c2))
    ci = binomtest(viol, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return LcsEstimate(m, trials, int(c1.sum()), int(c2.sum()), viol, float(ci.low), float(ci.high))


def monte_carlo_lcs_sweep(S: CandidateSet, trials: int, seed=None, ms: Iterable[int] | None = None, **kwargs) -> dict[int, LcsEstimate]:
    """Run :func:`monte_carlo_lcs_check` for every draw size in ``ms`` (default 1..k)."""
    ms = range(1, S.params.k + 1) if ms is None else ms
    if kwargs.get("method", "auto") in ("auto", "gram") and kwargs.get("gram") is None and len(S) ** 2 <= 25_000_000:
        kwargs["gram"] = gram_matrix(S)
    return {m: monte_carlo_lcs_check(S, m, trials, seed, **kwargs) for m in ms}


def footprint_bits(params: MaskingParams, size: int) -> int:
    """Bit-packed storage for ``size`` strings: w * ceil(log2(4k)) bits each."""
    bits_per_pick = max(1, math.ceil(math.log2(params.segment_length)))
    return size * params.w * bits_per_pick


_HEADER = "bmc-lcs v1"


def write_lcs(S: CandidateSet, path) -> None:
    """Write ``S`` in the text format: one header line, then one string per line."""
    p = S.params
    seed = "none" if S.seed is None else str(S.seed)
    header = (
        f"{_HEADER} k={p.k} w={p.w} delta={p.delta!r} size={len(S)} "
        f"verified={int(bool(S.verified))} seed={seed}\n"
    )
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header)
        chunk = 10_000
        for a in range(0, len(S), chunk):
            rows = S.picks[a : a + chunk]
            fh.write("\n".join(" ".join(map(str, r)) for r in rows.tolist()))
            fh.write("\n")


def _parse_rows(lines: list[str], w: int, first_line: int, path) -> np.ndarray:
    for off, line in enumerate(lines):
        if len(line.split()) != w:
            raise ValueError(f"{path}:{first_line + off}: expected {w} picks")
    return np.fromstring(" ".join(lines), dtype=np.int64, sep=" ")


def read_lcs(path, chunk_lines: int = 20_000) -> CandidateSet:
    """Parse a file written by :func:`write_lcs`, streaming the body in chunks."""
    with open(path, encoding="ascii") as fh:
        head = fh.readline().rstrip("\n")
        if not head.startswith(_HEADER + " "):
            raise ValueError(f"{path}: not a bmc-lcs v1 file")
        fields = {}
        for tok in head[len(_HEADER) + 1 :].split():
            key, sep, val = tok.partition("=")
            if not sep:
                raise ValueError(f"{path}: malformed header token {tok!r}")
            fields[key] = val
        try:
            k, w, size = int(fields["k"]), int(fields["w"]), int(fields["size"])
            delta = float(fields["delta"])
            verified = fields["verified"] == "1"
            seed = None if fields["seed"] == "none" else int(fields["seed"])
        except KeyError as exc:
            raise ValueError(f"{path}: header missing {exc.args[0]}") from None
        params = MaskingParams(k, w, delta)
        picks = np.empty((size, w), dtype=params.pick_dtype)
        row = 0
        lineno = 2
        while True:
            lines = [ln for ln in islice(fh, chunk_lines) if ln.strip()]
            if not lines:
                break
            if row + len(lines) > size:
                raise ValueError(f"{path}: more than {size} rows")
            vals = _parse_rows(lines, w, lineno, path)
            if vals.size and (vals.min() < 0 or vals.max() >= params.segment_length):
                raise ValueError(f"{path}: pick out of range [0, {params.segment_length})")
            picks[row : row + len(lines)] = vals.reshape(len(lines), w)
            row += len(lines)
            lineno += len(lines)
        if row != size:
            raise ValueError(f"{path}: expected {size} rows, found {row}")
    return CandidateSet(params, picks, verified=verified, seed=seed)
