"""Scenario runner: full protocol rounds, BMC1/BMC2 failure rates and the
two interval-based random-access baselines.

All Monte Carlo estimators run in fixed-size trial blocks.  Block ``b`` draws
from its own stream ``make_rng(seed, stream, b)``, and the auto-stop rule is
applied block by block in order, so the result does not depend on how many
threads evaluated the blocks.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from ._rng import STREAM_BMC1, STREAM_RA1, STREAM_RA2, STREAM_ROUND, as_rng, make_rng
from .channel import inject_bit_flips, superimpose_phase1, superimpose_phase2
from .codec import (
    DecodedMaskingList,
    MaskingIndex,
    airtime_bytes,
    decode_data_detailed,
    decode_masking,
    encode_data,
    phase1_codeword,
)
from .erasure import CRC_BYTES, RsParams, choose_wu
from .masking import CandidateSet, MaskingParams, construct_candidate_set, lcs_size

__all__ = [
    "SCHEMES",
    "CSV_FIELDS",
    "Topology",
    "RoundResult",
    "ExperimentConfig",
    "ExperimentResult",
    "compatibility_holds",
    "run_bmc_round",
    "bmc_airtime",
    "bmc1_failure_rate",
    "bmc2_failure_rate",
    "rand_access1",
    "rand_access2",
    "ra1_failure_exact",
    "ra2_failure_exact",
    "medium_utilization",
    "wilson_half_width",
    "run_sweep",
]

SCHEMES = ("BMC1", "BMC2", "RandAccess1", "RandAccess2")
CSV_FIELDS = (
    "scheme",
    "k",
    "d",
    "delta",
    "set_size",
    "t",
    "trials",
    "failure_rate",
    "ci_half_width",
    "airtime_bytes",
    "R",
    "seed",
)


# ---------------------------------------------------------------- topology


@dataclass(frozen=True)
class Topology:
    """Senders, receivers, and each receiver's set of neighbouring senders."""

    senders: tuple
    receivers: tuple
    adjacency: Mapping

    def __post_init__(self):
        object.__setattr__(self, "senders", tuple(self.senders))
        object.__setattr__(self, "receivers", tuple(self.receivers))
        adj = {r: tuple(sorted(set(self.adjacency.get(r, ())))) for r in self.receivers}
        known = set(self.senders)
        for r, nb in adj.items():
            unknown = set(nb) - known
            if unknown:
                raise ValueError(f"receiver {r!r} lists unknown senders {sorted(unknown)}")
        object.__setattr__(self, "adjacency", adj)

    @property
    def max_degree(self) -> int:
        return max((len(v) for v in self.adjacency.values()), default=0)

    def check_degree(self, k: int) -> None:
        if self.max_degree > k:
            raise ValueError(f"receiver degree {self.max_degree} exceeds k={k}")

    @classmethod
    def star(cls, n_senders: int) -> "Topology":
        """One receiver (id 0) hearing senders 0..n-1."""
        senders = tuple(range(n_senders))
        return cls(senders, (0,), {0: senders})

    @classmethod
    def random(cls, n_senders: int, n_receivers: int, k: int, seed=None, p: float = 0.5) -> "Topology":
        """Each receiver hears a random subset of at most ``k`` senders.

        Every sender/receiver pair is linked with probability ``p``; receivers
        over the degree cap keep a uniform random ``k`` of their links.
        """
        rng = as_rng(seed, STREAM_ROUND, 1)
        adj = {}
        for r in range(n_receivers):
            nb = np.flatnonzero(rng.random(n_senders) < p)
            if nb.size > k:
                nb = np.sort(rng.choice(nb, size=k, replace=False))
            adj[r] = tuple(int(s) for s in nb)
        return cls(tuple(range(n_senders)), tuple(range(n_receivers)), adj)


# ---------------------------------------------------------------- one round


def _sums_against(S: CandidateSet, T_picks: np.ndarray) -> np.ndarray:
    """For every string in S, the summed inner product with all rows of T_picks."""
    p = S.params
    L = p.segment_length
    flat = (np.arange(p.w, dtype=np.int64) * L + T_picks.astype(np.int64)).ravel()
    hist = np.bincount(flat, minlength=p.w * L)
    return hist[S.positions()].sum(axis=1)


def compatibility_holds(S: CandidateSet, T_indices: Sequence[int]) -> bool:
    """Both low-collision conditions for the draw ``T_indices`` from ``S``.

    (1) every string of S whose value is not in T has summed inner product
    at most w/2 with T; (2) for each i, the others in T have summed inner
    product at most w/2 with t_i.  Evaluated by direct counting.
    """
    T_indices = np.asarray(T_indices, dtype=np.int64)
    if T_indices.size == 0:
        return True
    w = S.params.w
    T = S.picks[T_indices]
    sums = _sums_against(S, T)
    over = np.flatnonzero(2 * sums > w)
    if over.size:
        # strings equal in value to a member of T are exempt
        rows = S.picks[over]
        sent = (rows[:, None, :] == T[None, :, :]).all(axis=2).any(axis=1)
        if not sent.all():
            return False
    own = (T[:, None, :] == T[None, :, :]).sum(axis=2)
    others = own.sum(axis=1) - w
    return bool(np.all(2 * others <= w))


@dataclass
class RoundResult:
    """Outcome of one protocol round.

    ``choices[s]`` is the index in S of sender s's masking string.
    ``outputs[r]`` lists the payloads receiver r accepted, in decode order.
    ``delivered[(s, r)]`` records whether r output s's payload.
    ``extras[r]`` counts outputs not matching any neighbour's payload.
    ``read_collision[r]`` is True if r read a phase-2 slot with two or more
    transmitters while decoding.
    ``event_e[r]`` records whether both compatibility conditions held for r.
    """

    choices: dict
    outputs: dict
    delivered: dict
    extras: dict
    read_collision: dict
    event_e: dict
    decoded: dict = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return sum(self.delivered.values()) / len(self.delivered) if self.delivered else 1.0


def run_bmc_round(
    topology: Topology,
    S: CandidateSet,
    payloads: Mapping,
    params: RsParams,
    seed=None,
    *,
    choices: Mapping | None = None,
    flips: int = 0,
    index: MaskingIndex | None = None,
    check_event: bool = True,
) -> RoundResult:
    """Run both phases for every receiver of ``topology``.

    ``choices`` overrides the random draw for some senders (to force
    duplicates, for instance).  ``flips`` adds that many random phase-1 bit
    flips at each receiver.
    """
    topology.check_degree(S.params.k)
    if S.params.w != params.w:
        raise ValueError(f"masking weight {S.params.w} does not match RS length {params.w}")
    rng = as_rng(seed, STREAM_ROUND)
    chosen = {}
    for s in topology.senders:
        if choices is not None and s in choices:
            chosen[s] = int(choices[s])
        else:
            chosen[s] = int(rng.integers(0, len(S)))
    phase1 = {s: phase1_codeword(S[i]) for s, i in chosen.items()}
    phase2 = {s: encode_data(payloads[s], S[chosen[s]], params) for s in topology.senders}

    outputs, delivered, extras, collided, event, decoded = {}, {}, {}, {}, {}, {}
    for r in topology.receivers:
        nb = topology.adjacency[r]
        z1 = superimpose_phase1([phase1[s] for s in nb], n_slots=S.params.length)
        if flips:
            z1 = inject_bit_flips(z1, flips, rng)
        T = decode_masking(z1, S, index=index)
        z2 = superimpose_phase2([phase2[s] for s in nb], n_slots=S.params.length)
        outcomes = decode_data_detailed(z2, T, params)
        got = [o.payload for o in outcomes if o.payload is not None]
        by_index = {o.index: o.payload for o in outcomes}
        outputs[r] = got
        decoded[r] = T
        collided[r] = any(o.read_collision for o in outcomes)
        expected = [payloads[s] for s in nb]
        for s in nb:
            delivered[(s, r)] = by_index.get(chosen[s]) == bytes(payloads[s])
        remaining = list(expected)
        n_extra = 0
        for g in got:
            if g in remaining:
                remaining.remove(g)
            else:
                n_extra += 1
        extras[r] = n_extra
        if check_event:
            event[r] = compatibility_holds(S, [chosen[s] for s in nb])
    return RoundResult(chosen, outputs, delivered, extras, collided, event, decoded)


# ---------------------------------------------------------------- metrics


def medium_utilization(k: int, d: int, airtime) -> Fraction:
    """Useful bytes (k items of d bytes) per byte of airtime."""
    airtime = Fraction(airtime)
    if airtime <= 0:
        raise ValueError("airtime must be positive")
    return Fraction(k * d) / airtime


def bmc_airtime(k: int, d: int) -> tuple[Fraction, int, int]:
    """(total airtime in bytes, w, u) of one BMC execution for item size ``d``."""
    w, u = choose_wu(d)
    p1, p2 = airtime_bytes(k, w, u)
    return p1 + p2, w, u


def wilson_half_width(failures: int, n: int, confidence: float = 0.95) -> float:
    if n == 0:
        return float("nan")
    ci = stats.binomtest(int(failures), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return (ci.high - ci.low) / 2


def _fmt_number(x) -> str:
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass(frozen=True)
class ExperimentConfig:
    """One (scheme, parameters) point of the experiment.

    ``trials=None`` means automatic: run blocks of ``block_trials`` until at
    least ``min_failures`` failed items are seen or ``max_trials`` is reached.
    """

    k: int
    d: int
    delta: float
    set_size: int | None = None
    t: int = 100_000
    trials: int | None = None
    seed: int = 0
    scheme: str = "BMC1"
    min_failures: int = 20
    max_trials: int = 200_000
    block_trials: int = 250
    threads: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.k < 1 or self.d < 1 or self.t < 0:
            raise ValueError("k and d must be positive and t non-negative")
        if self.d <= CRC_BYTES:
            raise ValueError(f"d must exceed the {CRC_BYTES}-byte CRC")
        if self.set_size is None:
            object.__setattr__(self, "set_size", lcs_size(self.k, self.delta))
        if self.trials is not None and self.trials < 1:
            raise ValueError("trials must be positive")

    @property
    def intervals(self) -> int:
        return self.t // self.d


@dataclass(frozen=True)
class ExperimentResult:
    scheme: str
    k: int
    d: int
    delta: float
    set_size: int
    t: int
    trials: int
    failures: int
    items: int
    failure_rate: float
    ci_half_width: float
    airtime_bytes: Fraction
    seed: int

    @property
    def R(self) -> Fraction:
        return medium_utilization(self.k, self.d, self.airtime_bytes) if self.airtime_bytes else Fraction(0)

    def row(self) -> dict:
        """CSV/JSON row with the fixed column set."""
        return {
            "scheme": self.scheme,
            "k": self.k,
            "d": self.d,
            "delta": self.delta,
            "set_size": self.set_size,
            "t": self.t,
            "trials": self.trials,
            "failure_rate": self.failure_rate,
            "ci_half_width": self.ci_half_width,
            "airtime_bytes": _fmt_number(self.airtime_bytes),
            "R": _fmt_number(self.R),
            "seed": self.seed,
        }


def _run_blocks(
    block_fn: Callable[[int, int], tuple[int, int]],
    config: ExperimentConfig,
) -> tuple[int, int, int]:
    """Drive ``block_fn(block_index, n_trials) -> (failures, items)``.

    Returns (trials, failures, items).  Blocks are evaluated in waves of
    ``threads`` but accumulated strictly in order, and the stop rule is
    checked after each block, so the totals match a sequential run.
    """
    B = config.block_trials
    if config.trials is not None:
        sizes = [min(B, config.trials - a) for a in range(0, config.trials, B)]
        stop_early = False
    else:
        sizes = [min(B, config.max_trials - a) for a in range(0, config.max_trials, B)]
        stop_early = True
    trials = failures = items = 0
    workers = max(1, config.threads)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for wave in range(0, len(sizes), workers):
            ids = range(wave, min(len(sizes), wave + workers))
            if pool is None:
                results = [block_fn(b, sizes[b]) for b in ids]
            else:
                results = list(pool.map(lambda b: block_fn(b, sizes[b]), ids))
            for b, (f, it) in zip(ids, results):
                trials += sizes[b]
                failures += f
                items += it
                if stop_early and failures >= config.min_failures:
                    return trials, failures, items
    finally:
        if pool is not None:
            pool.shutdown()
    return trials, failures, items


def _result(config: ExperimentConfig, scheme: str, trials: int, failures: int, items: int, airtime) -> ExperimentResult:
    return ExperimentResult(
        scheme=scheme,
        k=config.k,
        d=config.d,
        delta=config.delta,
        set_size=config.set_size,
        t=config.t,
        trials=trials,
        failures=failures,
        items=items,
        failure_rate=failures / items if items else float("nan"),
        ci_half_width=wilson_half_width(failures, items),
        airtime_bytes=Fraction(airtime),
        seed=config.seed,
    )


# ---------------------------------------------------------------- BMC1 / BMC2


def _bmc1_trial_failures(S: CandidateSet, drawn: np.ndarray, index: MaskingIndex | None) -> int:
    """Failed items in one star round where the k senders drew ``drawn``.

    A sender succeeds iff its string is decoded, nobody else drew the same
    string, and at most w/2 of its slots are shared with other decoded
    strings (RS decoding then succeeds; CRC has no false negatives).
    """
    p = S.params
    w = p.w
    pos = S.positions(drawn)
    z = np.zeros(p.length, dtype=bool)
    z[pos.ravel()] = True
    T = decode_masking(z, S, index=index).indices
    coverage = np.bincount(S.positions(T).ravel(), minlength=p.length)
    decoded = np.isin(drawn, T)
    _, inv, counts = np.unique(drawn, return_inverse=True, return_counts=True)
    unique_draw = counts[inv] == 1
    exclusive = (coverage[pos] == 1).sum(axis=1)
    ok = decoded & unique_draw & (2 * (w - exclusive) <= w)
    return int(drawn.size - ok.sum())


def bmc1_failure_rate(
    config: ExperimentConfig,
    S: CandidateSet,
    *,
    index: MaskingIndex | None = None,
) -> ExperimentResult:
    """Monte Carlo failure rate of one BMC execution, k senders to one receiver."""
    airtime, w, u = bmc_airtime(config.k, config.d)
    if airtime > config.t:
        raise ValueError(f"BMC needs {airtime} bytes of airtime but t={config.t}")
    if S.params.k != config.k or S.params.w != w:
        raise ValueError(f"set params (k={S.params.k}, w={S.params.w}) do not match k={config.k}, w={w}")
    k = config.k

    def block(b: int, n: int) -> tuple[int, int]:
        rng = make_rng(config.seed, STREAM_BMC1, config.d, b)
        draws = rng.integers(0, len(S), size=(n, k))
        return sum(_bmc1_trial_failures(S, row, index) for row in draws), n * k

    trials, failures, items = _run_blocks(block, config)
    return _result(replace(config, scheme="BMC1"), "BMC1", trials, failures, items, airtime)


def bmc2_failure_rate(bmc1: ExperimentResult, config: ExperimentConfig) -> ExperimentResult:
    """Failure rate of floor(t / 9kd) independent BMC executions: p^r."""
    if (bmc1.k, bmc1.d) != (config.k, config.d):
        raise ValueError("BMC1 result does not match the configuration")
    r = config.t // (9 * config.k * config.d)
    if r == 0:
        raise ValueError(f"t={config.t} leaves no room for a single execution (9kd={9 * config.k * config.d})")
    p = Fraction(bmc1.failures, bmc1.items) if bmc1.items else Fraction(bmc1.failure_rate)
    rate = float(p**r)
    if bmc1.items:
        ci = stats.binomtest(bmc1.failures, bmc1.items).proportion_ci(method="wilson")
        half = (ci.high**r - ci.low**r) / 2
    else:
        half = float("nan")
    airtime, _, _ = bmc_airtime(config.k, config.d)
    return ExperimentResult(
        scheme="BMC2",
        k=config.k,
        d=config.d,
        delta=config.delta,
        set_size=config.set_size,
        t=config.t,
        trials=bmc1.trials,
        failures=bmc1.failures,
        items=bmc1.items,
        failure_rate=rate,
        ci_half_width=half,
        airtime_bytes=airtime * r,
        seed=config.seed,
    )


# ---------------------------------------------------------------- baselines


def ra1_failure_exact(k: int, l: int) -> Fraction:
    """P(a given sender is never alone in l intervals), sending w.p. 1/k each."""
    if l <= 0:
        return Fraction(1)
    q = Fraction(1, k) * Fraction(k - 1, k) ** (k - 1)
    return (1 - q) ** l


def ra2_intervals(k: int, l: int) -> int:
    """Intervals each sender uses: floor(l/k), at least one when l >= 1."""
    return 0 if l < 1 else max(1, l // k)


def ra2_failure_exact(k: int, l: int) -> Fraction:
    """P(every interval of a given sender is also used by someone else).

    Each of the k senders uses c = ra2_intervals(k, l) distinct intervals.
    By inclusion-exclusion over the subset of the sender's intervals left
    free by all k-1 others.
    """
    c = ra2_intervals(k, l)
    if c == 0:
        return Fraction(1)
    total = math.comb(l, c)
    out = Fraction(0)
    for j in range(c + 1):
        free = Fraction(math.comb(l - j, c), total) ** (k - 1)
        out += (-1) ** j * math.comb(c, j) * free
    return out


def _ra1_block_multinomial(rng, n: int, k: int, l: int) -> int:
    # per interval: exactly one of "sender i alone" (i < k) or "nobody alone"
    q = (1.0 / k) * (1.0 - 1.0 / k) ** (k - 1)
    pvals = np.full(k + 1, q)
    pvals[k] = 1.0 - k * q
    counts = rng.multinomial(l, pvals, size=n)
    return int(np.count_nonzero(counts[:, :k] == 0))


def _ra1_block_intervals(rng, n: int, k: int, l: int) -> int:
    failures = 0
    for _ in range(n):
        tx = rng.random((l, k)) < 1.0 / k
        alone = tx & (tx.sum(axis=1, keepdims=True) == 1)
        failures += int(np.count_nonzero(~alone.any(axis=0)))
    return failures


def rand_access1(config: ExperimentConfig, *, method: str = "multinomial") -> ExperimentResult:
    """Each sender transmits in each of l = floor(t/d) intervals w.p. 1/k.

    ``method="intervals"`` simulates every interval; ``"multinomial"`` draws
    the per-sender counts of sole-sender intervals directly, which has the
    same distribution.
    """
    k, l = config.k, config.intervals
    if method not in ("multinomial", "intervals"):
        raise ValueError(f"unknown method {method!r}")
    fn = _ra1_block_multinomial if method == "multinomial" else _ra1_block_intervals

    def block(b: int, n: int) -> tuple[int, int]:
        if l == 0:
            return n * k, n * k
        return fn(make_rng(config.seed, STREAM_RA1, config.d, b), n, k, l), n * k

    trials, failures, items = _run_blocks(block, config)
    return _result(config, "RandAccess1", trials, failures, items, l * config.d)


def _ra2_block(rng, n: int, k: int, l: int, c: int) -> int:
    keys = rng.random((n, k, l))
    if c < l:
        chosen = np.argpartition(keys, c - 1, axis=2)[:, :, :c]
    else:
        chosen = np.broadcast_to(np.arange(l), (n, k, l))
    use = np.zeros((n, k, l), dtype=bool)
    np.put_along_axis(use, chosen, True, axis=2)
    load = use.sum(axis=1, keepdims=True)
    alone = use & (load == 1)
    return int(np.count_nonzero(~alone.any(axis=2)))


def rand_access2(config: ExperimentConfig) -> ExperimentResult:
    """Each sender transmits in floor(l/k) distinct uniformly chosen intervals."""
    k, l = config.k, config.intervals
    c = ra2_intervals(k, l)

    def block(b: int, n: int) -> tuple[int, int]:
        if c == 0:
            return n * k, n * k
        rng = make_rng(config.seed, STREAM_RA2, config.d, b)
        # keep the (n, k, l) key array near 16M entries
        step = max(1, (1 << 24) // (k * l))
        f = sum(_ra2_block(rng, min(step, n - a), k, l, c) for a in range(0, n, step))
        return f, n * k

    trials, failures, items = _run_blocks(block, config)
    return _result(config, "RandAccess2", trials, failures, items, l * config.d)


# ---------------------------------------------------------------- sweep


def run_sweep(
    base: ExperimentConfig,
    ds: Iterable[int] = (25, 50, 75, 100),
    *,
    sets: Mapping[int, CandidateSet] | None = None,
    use_index: bool = False,
    progress: Callable[[str], None] | None = None,
) -> list[ExperimentResult]:
    """All four schemes for every item size; rows ordered by d then scheme.

    Candidate sets are built per d (w depends on d) from ``base.seed`` unless
    supplied in ``sets``.
    """
    rows = []
    for d in ds:
        cfg = replace(base, d=d)
        if sets is not None and d in sets:
            S = sets[d]
        else:
            _, w, _ = bmc_airtime(cfg.k, d)
            S = construct_candidate_set(MaskingParams(cfg.k, w, cfg.delta), cfg.set_size, seed=cfg.seed)
        index = MaskingIndex(S) if use_index else None
        b1 = bmc1_failure_rate(replace(cfg, scheme="BMC1"), S, index=index)
        rows.append(b1)
        rows.append(bmc2_failure_rate(b1, replace(cfg, scheme="BMC2")))
        rows.append(rand_access1(replace(cfg, scheme="RandAccess1")))
        rows.append(rand_access2(replace(cfg, scheme="RandAccess2")))
        if progress is not None:
            for r in rows[-4:]:
                progress(f"{r.scheme:<12} d={d:<4} trials={r.trials:<7} failure_rate={r.failure_rate:.3e}")
    return rows
