"""Command-line front end.

    bmc lcs-build   --k 20 --d 100 --delta 1e-3 --seed 7 --out set.lcs
    bmc lcs-verify  set.lcs
    bmc roundtrip   --k 10 --d 50 --delta 0.01 --senders 6
    bmc experiment  --profile small --out results.csv

Exit codes: 0 success, 1 verification or delivery failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings

import numpy as np

from ._rng import make_rng
from .codec import decode_masking
from .erasure import CRC_BYTES, RsParams, choose_wu
from .masking import (
    MaskingParams,
    check_promising,
    construct_candidate_set,
    footprint_bits,
    lcs_size,
    read_lcs,
    write_lcs,
)
from .sim import CSV_FIELDS, ExperimentConfig, Topology, run_bmc_round, run_sweep

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

VERIFY_LIMIT = 100_000

# k, delta, set size, airtime budget t (bytes)
PROFILES = {
    "small": dict(k=20, delta=1e-3, set_size=40_000, t=20_000),
    "paper": dict(k=100, delta=1e-4, set_size=2_000_000, t=100_000),
}
DEFAULT_DS = (25, 50, 75, 100)


class UsageError(Exception):
    pass


def _d_list(text: str) -> list[int]:
    try:
        ds = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None
    if not ds or min(ds) <= CRC_BYTES:
        raise argparse.ArgumentTypeError(f"item sizes must exceed {CRC_BYTES} bytes")
    return ds


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _prob(text: str) -> float:
    v = float(text)
    if not (0 < v <= 1):
        raise argparse.ArgumentTypeError("must be in (0, 1]")
    return v


def _human_bytes(n: float) -> str:
    return f"{n / 1e6:.1f} MB ({n / 2**20:.1f} MiB)"


def cmd_lcs_build(args, out=None) -> int:
    out = out or sys.stdout
    k, delta = args.k, args.delta
    w = args.w if args.w is not None else choose_wu(args.d)[0]
    size = args.set_size or lcs_size(k, delta)
    params = MaskingParams(k, w, delta)
    foot = footprint_bits(params, size)
    print(f"k={k} w={w} delta={delta} size={size} seed={args.seed}", file=out)
    print(
        f"footprint: {w * math.ceil(math.log2(4 * k))} bits per string, {_human_bytes(foot / 8)} bit-packed",
        file=out,
    )
    S = construct_candidate_set(params, size, seed=args.seed)
    print(f"in-memory picks: {_human_bytes(S.nbytes())}", file=out)
    write_lcs(S, args.out)
    print(f"wrote {args.out}", file=out)
    return EXIT_OK


def cmd_lcs_verify(args, out=None) -> int:
    out = out or sys.stdout
    S = read_lcs(args.file)
    n, w = len(S), S.params.w
    if n > args.limit and not args.force:
        print(
            f"refusing to verify |S|={n}: the check costs Theta(|S|^2 w) ~ {float(n) ** 2 * w:.2e} "
            f"operations; pass --force to run it anyway (limit {args.limit})",
            file=sys.stderr,
        )
        return EXIT_USAGE
    diag = check_promising(S, workers=args.threads)
    print(diag.summary(), file=out)
    if args.out and diag.is_promising:
        write_lcs(S, args.out)
        print(f"wrote verified set to {args.out}", file=out)
    return EXIT_OK if diag.is_promising else EXIT_FAIL


def cmd_roundtrip(args, out=None) -> int:
    out = out or sys.stdout
    d = args.d
    w, u = choose_wu(d)
    if args.lcs:
        S = read_lcs(args.lcs)
        if S.params.w != w:
            raise UsageError(f"{args.lcs} has w={S.params.w}, but d={d} needs w={w}")
    else:
        S = construct_candidate_set(MaskingParams(args.k, w, args.delta), args.set_size or lcs_size(args.k, args.delta), seed=args.seed)
    m = args.senders if args.senders is not None else S.params.k
    if m > S.params.k:
        raise UsageError(f"--senders {m} exceeds k={S.params.k}")
    rng = make_rng(args.seed, 99)
    payloads = {s: rng.integers(0, 256, size=d - CRC_BYTES, dtype=np.uint8).tobytes() for s in range(m)}
    result = run_bmc_round(Topology.star(m), S, payloads, RsParams(w, u, d), seed=args.seed, flips=args.flips)
    ok = sum(result.delivered.values())
    print(f"k={S.params.k} w={w} u={u} d={d} |S|={len(S)} senders={m} flips={args.flips}", file=out)
    print(f"decoded masking strings: {len(result.decoded[0])}", file=out)
    print(f"delivered {ok}/{m}, extras {result.extras[0]}, compatibility conditions hold: {result.event_e[0]}", file=out)
    return EXIT_OK if ok == m and result.extras[0] == 0 else EXIT_FAIL


def _experiment_base(args) -> tuple[ExperimentConfig, list[int]]:
    prof = dict(PROFILES[args.profile])
    for key, flag in (("k", args.k), ("delta", args.delta), ("set_size", args.set_size), ("t", args.airtime)):
        if flag is not None:
            prof[key] = flag
    if args.set_size is None and (args.k is not None or args.delta is not None):
        prof["set_size"] = lcs_size(prof["k"], prof["delta"])
    ds = args.d if args.d else list(DEFAULT_DS)
    base = ExperimentConfig(
        k=prof["k"],
        d=ds[0],
        delta=prof["delta"],
        set_size=prof["set_size"],
        t=prof["t"],
        trials=args.trials,
        seed=args.seed,
        min_failures=args.min_failures,
        max_trials=args.max_trials,
        threads=args.threads,
    )
    for d in ds:
        need = 9 * base.k * d
        if need > base.t:
            raise UsageError(f"d={d}: one BMC execution needs 9kd={need} bytes, more than t={base.t}")
    return base, ds


def format_rows(rows, fmt: str) -> str:
    dicts = [r.row() for r in rows]
    for d in dicts:
        for key in ("failure_rate", "ci_half_width", "delta"):
            d[key] = float(d[key])
    if fmt == "json":
        return json.dumps(dicts, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for d in dicts:
        writer.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in d.items()})
    return buf.getvalue()


def _timing(base: ExperimentConfig, ds, out) -> None:
    for d in ds:
        w, _ = choose_wu(d)
        S = construct_candidate_set(MaskingParams(base.k, w, base.delta), base.set_size, seed=base.seed)
        rng = make_rng(base.seed, 98, d)
        drawn = rng.integers(0, len(S), size=base.k)
        z = np.zeros(S.params.length, dtype=bool)
        z[S.positions(drawn).ravel()] = True
        decode_masking(z, S, workers=base.threads)  # warm caches
        t0 = time.perf_counter()
        decode_masking(z, S, workers=base.threads)
        dt = time.perf_counter() - t0
        print(
            f"timing d={d} w={w} |S|={len(S)}: scan {dt * 1e3:.1f} ms, "
            f"{dt * 1e3 / base.k:.3f} ms per masking string",
            file=out,
        )


def cmd_experiment(args, out=None) -> int:
    out = out or sys.stdout
    base, ds = _experiment_base(args)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    if args.timing:
        _timing(base, ds, sys.stderr)
    rows = run_sweep(base, ds, progress=log)
    text = format_rows(rows, args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        out.write(text)
    return EXIT_OK


def _add_set_flags(p, *, k=100, delta=1e-4, d=100):
    p.add_argument("--k", type=_positive, default=k, help="maximum number of senders per receiver")
    p.add_argument("--delta", type=_prob, default=delta, help="LCS failure parameter")
    p.add_argument("--d", type=_positive, default=d, help="data item size in bytes, CRC included")
    p.add_argument("--set-size", type=_positive, default=None, help="number of strings (default 2k/delta)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bmc", description="Bit-mixing coding tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lcs-build", help="draw a random candidate set and write it to a file")
    _add_set_flags(p)
    p.add_argument("--w", type=_positive, default=None, help="string weight (default: from --d)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lcs_build)

    p = sub.add_parser("lcs-verify", help="run the promising-set check on a set file")
    p.add_argument("file")
    p.add_argument("--force", action="store_true", help=f"verify even above {VERIFY_LIMIT} strings")
    p.add_argument("--limit", type=_positive, default=VERIFY_LIMIT, help=argparse.SUPPRESS)
    p.add_argument("--threads", type=_positive, default=1)
    p.add_argument("--out", default=None, help="write the set with verified=1 if it passes")
    p.set_defaults(func=cmd_lcs_verify)

    p = sub.add_parser("roundtrip", help="run one star round end to end")
    _add_set_flags(p, k=10, delta=0.01, d=50)
    p.add_argument("--senders", type=_positive, default=None, help="senders in the star (default k)")
    p.add_argument("--flips", type=int, default=0, help="random phase-1 bit flips at the receiver")
    p.add_argument("--lcs", default=None, help="use this set file instead of drawing one")
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("experiment", help="failure rates of BMC1, BMC2 and both random-access baselines")
    p.add_argument("--profile", choices=sorted(PROFILES), default="small")
    p.add_argument("--k", type=_positive, default=None)
    p.add_argument("--d", type=_d_list, default=None, help="item sizes, e.g. 25,50,75,100")
    p.add_argument("--delta", type=_prob, default=None)
    p.add_argument("--set-size", type=_positive, default=None)
    p.add_argument("--airtime", type=_positive, default=None, help="airtime budget t in bytes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=_positive, default=None, help="fixed trial count (default: automatic)")
    p.add_argument("--min-failures", type=_positive, default=20)
    p.add_argument("--max-trials", type=_positive, default=200_000)
    p.add_argument("--threads", type=_positive, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None)
    p.add_argument("--timing", action="store_true", help="report phase-1 decode time per masking string")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        seed = getattr(args, "seed", None)
        if seed is not None and seed < 0:
            raise UsageError("--seed must be non-negative")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return args.func(args)
    except UsageError as exc:
        print(f"bmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"bmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
