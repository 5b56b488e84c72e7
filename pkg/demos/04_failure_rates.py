"""
Failure rates against random access
===================================

A reduced version of the failure-rate experiment: BMC1 is one execution,
BMC2 repeats it floor(t/9kd) times, and the two random-access baselines use
the same airtime budget t.  The full sweep is ``bmc experiment``.
"""
from __future__ import annotations

from bmc import ExperimentConfig, run_sweep
from bmc.sim import ra1_failure_exact, ra2_failure_exact

base = ExperimentConfig(k=20, d=25, delta=1e-3, set_size=40_000, t=20_000, seed=0, min_failures=20, max_trials=20_000)
rows = run_sweep(base, ds=(25, 100))

print(f"{'scheme':<12} {'d':>4} {'trials':>7} {'failure rate':>13} {'airtime':>8}")
for r in rows:
    print(f"{r.scheme:<12} {r.d:>4} {r.trials:>7} {r.failure_rate:>13.3e} {float(r.airtime_bytes):>8.0f}")

# The baselines have closed forms; Monte Carlo sees no failures when they
# are very rare.
print()
for d in (25, 100):
    l = base.t // d
    print(f"d={d}: exact RandAccess1 {float(ra1_failure_exact(base.k, l)):.2e}, RandAccess2 {float(ra2_failure_exact(base.k, l)):.2e}")
