"""
Reed-Solomon erasure code with CRC framing
==========================================

A d-byte item (payload plus CRC-32) becomes w symbols.  Any w/2 of them
recover the item; fewer cannot.
"""
from __future__ import annotations

import numpy as np

from bmc import ERASED, ErasureDecodeError, RsParams, crc_append, crc_check, rs_encode, rs_erasure_decode
from bmc.erasure import DataItem, choose_wu

rng = np.random.default_rng(0)

for d in (25, 100, 300):
    w, u = choose_wu(d)
    print(f"d={d:<4} -> w={w} symbols of u={u} byte(s)")

d = 50
params = RsParams.for_item_size(d)
item = crc_append(b"a bit-mixing demo payload".ljust(d - 4, b"."))
print(f"\nitem of {item.size} bytes, CRC ok: {crc_check(item)}")
code = rs_encode(item.to_bytes(), params)

# Erase exactly half the symbols: still decodable.
received = code.copy()
received[rng.choice(params.w, size=params.w // 2, replace=False)] = ERASED
raw = rs_erasure_decode(received, params)
print("w/2 erasures  ->", DataItem.from_bytes(raw[:d]).payload.decode())

# One more erasure and the item is gone.
received[np.flatnonzero(received != ERASED)[0]] = ERASED
try:
    rs_erasure_decode(received, params)
except ErasureDecodeError as exc:
    print("w/2+1 erasures ->", exc)

# A corrupted survivor decodes to garbage, and the CRC rejects it.
received = code.copy()
received[0] ^= 1
bad = DataItem.from_bytes(rs_erasure_decode(received, params)[:d])
print("corrupted symbol -> CRC ok:", crc_check(bad))
