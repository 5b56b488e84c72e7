from __future__ import annotations

import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bmc.masking import (
    CandidateSet,
    MaskingParams,
    MaskingString,
    check_promising,
    construct_candidate_set,
    extend_lcs,
    extend_string,
    footprint_bits,
    gram_matrix,
    inner_product,
    is_compatible,
    lcs_size,
    monte_carlo_lcs_check,
    monte_carlo_lcs_sweep,
    read_lcs,
    theoretical_w,
    write_lcs,
)

from oracles import dot_bits, expand_bits


def ms(k, picks, delta=1.0):
    return MaskingString(MaskingParams(k, len(picks), delta), tuple(picks))


# ---------------------------------------------------------------- types


def test_params_validation():
    with pytest.raises(ValueError):
        MaskingParams(0, 4)
    with pytest.raises(ValueError):
        MaskingParams(2, 0)
    with pytest.raises(ValueError):
        MaskingParams(2, 4, 0.0)
    with pytest.raises(ValueError):
        MaskingParams(2, 4, 1.5)
    p = MaskingParams(3, 5, 0.1)
    assert p.segment_length == 12 and p.length == 60


def test_string_validation_and_bits():
    with pytest.raises(ValueError):
        ms(1, (0, 4))
    with pytest.raises(ValueError):
        MaskingString(MaskingParams(1, 3), (0, 1))
    s = ms(2, (0, 7, 3))
    bits = s.to_bits()
    assert bits.size == 24 and bits.sum() == 3
    assert list(np.flatnonzero(bits)) == [0, 15, 19]
    assert MaskingString.from_bits(bits, s.params) == s


# ---------------------------------------------------------------- inner products


def test_inner_product_examples():
    a = ms(1, (0, 1, 2))
    b = ms(1, (0, 3, 2))
    assert inner_product(a, b) == 2
    assert inner_product(a, b) == dot_bits(expand_bits(a.picks, 1), expand_bits(b.picks, 1))
    assert inner_product(a, a) == 3
    assert inner_product(ms(1, (0, 0)), ms(1, (1, 1))) == 0


def test_inner_product_param_mismatch():
    with pytest.raises(ValueError):
        inner_product(ms(1, (0, 1)), ms(2, (0, 1)))


def test_compatibility_examples():
    lam = ms(1, (0, 0, 0, 0))
    t = ms(1, (0, 0, 1, 1))
    assert is_compatible(lam, [])
    assert not is_compatible(lam, [lam])
    assert is_compatible(lam, [t])  # 2 <= 4/2
    assert not is_compatible(lam, [t, t])  # 4 > 2
    with pytest.raises(ValueError):
        is_compatible(lam, [ms(2, (0, 0, 0, 0))])


@given(
    st.integers(1, 4).flatmap(
        lambda k: st.integers(1, max(1, 64 // (4 * k))).flatmap(
            lambda w: st.tuples(
                st.just(k),
                st.lists(st.integers(0, 4 * k - 1), min_size=w, max_size=w),
                st.lists(st.integers(0, 4 * k - 1), min_size=w, max_size=w),
            )
        )
    )
)
def test_segment_product_equals_bit_product(case):
    # every string with 4kw <= 64
    k, pa, pb = case
    a, b = ms(k, pa), ms(k, pb)
    assert inner_product(a, b) == dot_bits(expand_bits(pa, k), expand_bits(pb, k))
    assert inner_product(a, b) == inner_product(b, a)
    assert 0 <= inner_product(a, b) <= a.params.w
    assert (inner_product(a, b) == a.params.w) == (a == b)


@given(
    st.integers(1, 5).flatmap(
        lambda k: st.integers(1, 20).flatmap(
            lambda w: st.tuples(
                st.lists(st.integers(0, 4 * k - 1), min_size=w, max_size=w),
                st.lists(st.integers(0, 4 * k - 1), min_size=w, max_size=w),
                st.just(k),
            )
        )
    ),
    st.integers(1, 4),
)
def test_extension_scales_inner_product(case, c):
    pa, pb, k = case
    a, b = ms(k, pa), ms(k, pb)
    assert inner_product(extend_string(a, c), extend_string(b, c)) == c * inner_product(a, b)


@given(
    st.integers(1, 3).flatmap(
        lambda k: st.tuples(
            st.just(k),
            st.lists(st.lists(st.integers(0, 4 * k - 1), min_size=6, max_size=6), min_size=1, max_size=7),
        )
    ),
    st.integers(0, 7),
)
def test_compatibility_is_monotone_under_subsets(case, split):
    k, rows = case
    lam, *rest = [ms(k, r) for r in rows]
    t1, t2 = rest[:split], rest[split:]
    if is_compatible(lam, t1 + t2):
        assert is_compatible(lam, t1) and is_compatible(lam, t2)


# ---------------------------------------------------------------- construction


def test_construct_determinism_and_range():
    p = MaskingParams(4, 30, 0.1)
    a = construct_candidate_set(p, 500, seed=11)
    b = construct_candidate_set(p, 500, seed=11)
    c = construct_candidate_set(p, 500, seed=12)
    assert np.array_equal(a.picks, b.picks)
    assert not np.array_equal(a.picks, c.picks)
    assert a.picks.min() >= 0 and a.picks.max() < 16
    assert not a.verified
    one = construct_candidate_set(p, 1, seed=0)
    assert len(one) == 1 and all(0 <= x < 16 for x in one[0].picks)
    with pytest.raises(ValueError):
        construct_candidate_set(p, 0, seed=0)


def test_construct_picks_are_uniform():
    p = MaskingParams(2, 50, 0.1)
    S = construct_candidate_set(p, 4000, seed=5)
    counts = np.bincount(S.picks.ravel(), minlength=8)
    expected = S.picks.size / 8
    # chi-square with 7 dof: 99.9% quantile is about 24.3
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 24.3


def test_full_scale_set_size():
    assert lcs_size(100, 1e-4) == 2_000_000
    assert lcs_size(20, 0.02) == 2000
    assert lcs_size(20, 1e-3) == 40_000


def test_footprint_full_scale():
    # 9 bits per pick, 200 picks, 2e6 strings
    bits = footprint_bits(MaskingParams(100, 200, 1e-4), 2_000_000)
    assert bits == 2_000_000 * 200 * 9
    assert bits // 8 == 450_000_000 <= 500_000_000


# ---------------------------------------------------------------- theoretical weight


def test_theoretical_w_values():
    assert theoretical_w(100, 0.01) == 2673
    assert theoretical_w(100, 0.02) == 2236
    assert theoretical_w(100, 0.01) == math.ceil(20 * math.log(1e4) * math.log(2e6))


def test_theoretical_w_monotone_and_errors():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert theoretical_w(100, 0.005) > theoretical_w(100, 0.01) > theoretical_w(100, 0.02)
        with pytest.raises(ValueError):
            theoretical_w(100, 0.0)
        with pytest.raises(ValueError):
            theoretical_w(100, 1.0)
    with pytest.warns(UserWarning):
        theoretical_w(20, 0.02)  # k below 6 ln(2k/delta^2)
    with pytest.warns(UserWarning):
        theoretical_w(1000, 0.05)


# ---------------------------------------------------------------- promising sets


def _fraction_oracle(S: CandidateSet):
    """Per-string (mean, max deviation, squared deviation) with exact rationals."""
    n = len(S)
    rows = [S[i] for i in range(n)]
    out = []
    for i in range(n):
        prods = [inner_product(rows[i], rows[j]) for j in range(n) if j != i]
        mu = Fraction(sum(prods), n - 1)
        out.append((mu, max(abs(x - mu) for x in prods), sum((x - mu) ** 2 for x in prods)))
    return out


def test_check_promising_matches_rational_oracle():
    S = construct_candidate_set(MaskingParams(2, 12, 0.05), 40, seed=3)
    diag = check_promising(S)
    n = len(S)
    for i, (mu, dev, sq) in enumerate(_fraction_oracle(S)):
        assert diag.mean(i) == mu
        assert Fraction(int(diag.max_dev_scaled[i]), n - 1) == dev
        assert Fraction(int(diag.sq_dev_scaled[i]), n - 1) == sq


def test_check_promising_matches_fraction_oracle():
    p = MaskingParams(2, 12, 0.05)
    S = construct_candidate_set(p, 40, seed=4)
    diag = check_promising(S)
    ln = math.log(p.k / p.delta)
    n = len(S)
    bad = set()
    for i, (mu, dev, sq) in enumerate(_fraction_oracle(S)):
        target = Fraction(p.w, 4 * p.k)
        if not abs(mu - target) < Fraction(4, 100) * target:
            bad.add((i, 1))
        if not float(dev) < 4 * ln:
            bad.add((i, 2))
        if not float(sq) < (n - 1) * (p.w / (5 * p.k)) * ln:
            bad.add((i, 3))
    assert {(f.index, f.check) for f in diag.failures} == bad
    assert diag.is_promising == (not bad)
    assert S.verified == diag.is_promising


def test_verified_small_set_passes_and_has_no_duplicates():
    S = construct_candidate_set(MaskingParams(5, 100, 0.005), 2000, seed=3)
    diag = check_promising(S)
    assert diag.is_promising and S.verified
    assert np.unique(S.picks, axis=0).shape[0] == len(S)
    assert "promising set: yes" in diag.summary()


def test_duplicate_string_fails_max_deviation_naming_both():
    p = MaskingParams(5, 100, 0.005)
    S = construct_candidate_set(p, 300, seed=8)
    picks = S.picks.copy()
    picks[17] = picks[200]
    D = CandidateSet(p, picks)
    diag = check_promising(D)
    assert not diag.is_promising and not D.verified
    dev_pairs = {(f.index, f.partner) for f in diag.failures if f.check == 2}
    assert (17, 200) in dev_pairs and (200, 17) in dev_pairs
    # the duplicate pair sits w - mu above the mean, beyond the max-deviation bound
    assert p.w - diag.mean(17) >= 4 * math.log(p.k / p.delta)
    assert "check 2 (max deviation)" in diag.summary()


def test_adversarial_near_duplicate_fails_max_deviation():
    p = MaskingParams(5, 100, 0.005)
    S = construct_candidate_set(p, 300, seed=9)
    picks = S.picks.copy()
    bound = 4 * math.log(p.k / p.delta)
    # copy string 3 into string 4 in enough segments to exceed mu + bound
    shared = int(math.ceil(p.w / (4 * p.k) + bound)) + 2
    picks[4, :shared] = picks[3, :shared]
    picks[4, shared:] = (picks[3, shared:] + 1) % p.segment_length
    A = CandidateSet(p, picks)
    assert inner_product(A[3], A[4]) == shared
    assert dot_bits(expand_bits(A[3].picks, p.k), expand_bits(A[4].picks, p.k)) == shared
    diag = check_promising(A)
    assert any(f.check == 2 and {f.index, f.partner} == {3, 4} for f in diag.failures)


def test_check_promising_needs_two_strings():
    with pytest.raises(ValueError):
        check_promising(construct_candidate_set(MaskingParams(2, 4), 1, seed=0))


def test_check_promising_independent_of_partitioning():
    S = construct_candidate_set(MaskingParams(3, 40, 0.01), 600, seed=1)
    a = check_promising(S)
    b = check_promising(S, workers=3, block_rows=37)
    assert np.array_equal(a.row_sums, b.row_sums)
    assert np.array_equal(a.max_dev_scaled, b.max_dev_scaled)
    assert np.array_equal(a.sq_dev_scaled, b.sq_dev_scaled)
    assert a.failures == b.failures


def test_gram_matrix_matches_pairwise():
    S = construct_candidate_set(MaskingParams(2, 10), 25, seed=2)
    G = gram_matrix(S)
    for i in range(len(S)):
        for j in range(len(S)):
            assert G[i, j] == inner_product(S[i], S[j])


def test_diagnostics_report_gap_to_proven_weight():
    S = construct_candidate_set(MaskingParams(5, 100, 0.005), 500, seed=3)
    diag = check_promising(S)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert diag.theoretical_w == theoretical_w(5, 0.005)
    assert "below the proven weight" in diag.summary()


# ---------------------------------------------------------------- extension


def test_extend_lcs():
    p = MaskingParams(3, 20, 0.01)
    S = construct_candidate_set(p, 30, seed=6)
    S.verified = True
    same = extend_lcs(S, 1)
    assert np.array_equal(same.picks, S.picks) and same.params == S.params
    two = extend_lcs(S, 2)
    assert two.params.w == 40 and two.verified
    G1, G2 = gram_matrix(S), gram_matrix(two)
    assert np.array_equal(G2, 2 * G1)
    with pytest.raises(ValueError):
        extend_lcs(S, 0)


def test_extension_preserves_compatibility():
    lam = ms(1, (0, 1, 2, 3))
    T = [ms(1, (0, 1, 0, 0))]
    assert is_compatible(lam, T)
    assert is_compatible(extend_string(lam, 3), [extend_string(t, 3) for t in T])


# ---------------------------------------------------------------- Monte Carlo LCS check


def test_mc_single_draw_never_violates_condition_two():
    S = construct_candidate_set(MaskingParams(5, 100, 0.005), 2000, seed=3)
    check_promising(S)
    est = monte_carlo_lcs_check(S, 1, 3000, seed=1)
    assert est.cond2_violations == 0


def test_mc_repeated_string_always_violates():
    p = MaskingParams(4, 20, 0.1)
    row = construct_candidate_set(p, 1, seed=1).picks
    S = CandidateSet(p, np.repeat(row, 50, axis=0))
    for m in (2, 3, 4):
        est = monte_carlo_lcs_check(S, m, 200, seed=m)
        assert est.cond2_violations == 200 and est.rate == 1.0


def test_mc_methods_agree_and_are_deterministic():
    S = construct_candidate_set(MaskingParams(3, 16, 0.05), 300, seed=2)
    a = monte_carlo_lcs_check(S, 3, 1500, seed=4, method="gram")
    b = monte_carlo_lcs_check(S, 3, 1500, seed=4, method="direct")
    c = monte_carlo_lcs_check(S, 3, 1500, seed=4, method="gram", workers=3, block_trials=100)
    d = monte_carlo_lcs_check(S, 3, 1500, seed=4, method="gram", block_trials=100)
    assert (a.cond1_violations, a.cond2_violations) == (b.cond1_violations, b.cond2_violations)
    assert c == d
    assert a.ci_low <= a.rate <= a.ci_high


def test_mc_rejects_bad_m():
    S = construct_candidate_set(MaskingParams(3, 16), 10, seed=2)
    with pytest.raises(ValueError):
        monte_carlo_lcs_check(S, 0, 10)
    with pytest.raises(ValueError):
        monte_carlo_lcs_check(S, 4, 10)


def test_mc_sweep_covers_every_m():
    S = construct_candidate_set(MaskingParams(3, 40, 0.01), 600, seed=1)
    out = monte_carlo_lcs_sweep(S, 200, seed=0)
    assert sorted(out) == [1, 2, 3]
    assert out[1].cond2_violations == 0


# ---------------------------------------------------------------- file format


def test_lcs_file_round_trip(tmp_path):
    p = MaskingParams(7, 13, 0.0123)
    S = construct_candidate_set(p, 321, seed=99)
    S.verified = True
    f1, f2 = tmp_path / "a.lcs", tmp_path / "b.lcs"
    write_lcs(S, f1)
    head = f1.read_text().splitlines()[0]
    assert head == "bmc-lcs v1 k=7 w=13 delta=0.0123 size=321 verified=1 seed=99"
    R = read_lcs(f1, chunk_lines=50)
    assert R.params == S.params and R.verified and R.seed == 99
    assert np.array_equal(R.picks, S.picks)
    write_lcs(R, f2)
    assert f1.read_bytes() == f2.read_bytes()


def test_lcs_file_body_lines(tmp_path):
    S = construct_candidate_set(MaskingParams(2, 5, 0.5), 10, seed=1)
    f = tmp_path / "s.lcs"
    write_lcs(S, f)
    lines = f.read_text().splitlines()
    assert len(lines) == 11
    assert all(len(line.split()) == 5 for line in lines[1:])


@pytest.mark.parametrize(
    "body, msg",
    [
        ("bmc-lcs v2 k=1 w=2 delta=0.5 size=1 verified=0 seed=none\n0 1\n", "not a bmc-lcs"),
        ("bmc-lcs v1 k=1 w=2 delta=0.5 size=2 verified=0 seed=none\n0 1\n", "expected 2 rows"),
        ("bmc-lcs v1 k=1 w=2 delta=0.5 size=1 verified=0 seed=none\n0 1 2\n", "expected 2 picks"),
        ("bmc-lcs v1 k=1 w=2 delta=0.5 size=1 verified=0 seed=none\n0 9\n", "out of range"),
        ("bmc-lcs v1 k=1 w=2 size=1 verified=0 seed=none\n0 1\n", "missing delta"),
    ],
)
def test_lcs_file_errors(tmp_path, body, msg):
    f = tmp_path / "bad.lcs"
    f.write_text(body)
    with pytest.raises(ValueError, match=msg):
        read_lcs(f)
