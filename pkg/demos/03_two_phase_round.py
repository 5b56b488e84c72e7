"""
One protocol round on a random topology
=======================================

Senders draw masking strings, broadcast them (phase 1), then broadcast
their RS-coded items on the slots of their strings (phase 2).  Each
receiver decodes its neighbours' strings and then their items.
"""
from __future__ import annotations

import numpy as np

from bmc import MaskingParams, RsParams, Topology, check_promising, construct_candidate_set, run_bmc_round

k, w = 10, 100
S = construct_candidate_set(MaskingParams(k, w, 0.004), 5000, seed=0)
print("promising:", check_promising(S).is_promising)

topo = Topology.random(n_senders=14, n_receivers=3, k=k, seed=1, p=0.5)
for r, nb in topo.adjacency.items():
    print(f"receiver {r}: senders {list(nb)}")

params = RsParams(w, 1, w // 2)
rng = np.random.default_rng(1)
payloads = {s: rng.bytes(params.d - 4) for s in topo.senders}
res = run_bmc_round(topo, S, payloads, params, seed=3)

print()
for r, nb in topo.adjacency.items():
    ok = sum(res.delivered[(s, r)] for s in nb)
    print(
        f"receiver {r}: decoded {len(res.decoded[r])} strings, delivered {ok}/{len(nb)}, "
        f"extras {res.extras[r]}, compatibility conditions hold: {res.event_e[r]}"
    )

# Phase-1 noise: the decoder needs 3w/4 of a string's slots, so up to w/4
# flips on its ones are tolerated.
noisy = run_bmc_round(topo, S, payloads, params, seed=3, flips=40)
print(f"\nwith 40 random phase-1 flips per receiver: success rate {noisy.success_rate:.3f}")
