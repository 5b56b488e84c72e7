"""
Low-collision masking-string sets
=================================

Draw a random candidate set, run the promising-set check on it, and then
estimate by sampling how often a random draw of senders breaks one of the
two compatibility conditions.
"""
from __future__ import annotations

import warnings

from bmc import MaskingParams, check_promising, construct_candidate_set, monte_carlo_lcs_sweep, theoretical_w

warnings.simplefilter("ignore")

# The proven weight grows like ln(k/delta) ln(2k/delta^2).
for k, delta in [(20, 0.02), (100, 0.02), (100, 0.01)]:
    print(f"k={k:<4} delta={delta:<5} proven weight w={theoretical_w(k, delta)}")

# A small set at the proven weight: 2k/delta strings, each segment's one
# placed uniformly at random.
k, delta = 20, 0.02
params = MaskingParams(k, theoretical_w(k, delta), delta)
S = construct_candidate_set(params, 2000, seed=2)
print()
print(check_promising(S).summary())

# The check is sufficient, not necessary.  Sampling measures the actual
# violation rate for draws of m senders; it should stay below delta.
print()
for m, est in monte_carlo_lcs_sweep(S, 20_000, seed=0, ms=(1, 5, 10, 20)).items():
    print(f"m={m:<3} violations {est.violations:>4}/{est.trials}  rate {est.rate:.4f}  (delta {delta})")

# Far below the proven weight, sets still decode well in practice but the
# deterministic check tends to fail.
small = construct_candidate_set(MaskingParams(k, 200, delta), 2000, seed=2)
print()
print(check_promising(small).summary())
