from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmc.erasure import (
    BLANK,
    ERASED,
    DataItem,
    ErasureDecodeError,
    RsParams,
    choose_wu,
    crc32,
    crc_append,
    crc_check,
    evaluation_points,
    gf,
    rs_encode,
    rs_erasure_decode,
)

from oracles import crc32_bitwise, gf_mul_bitwise, rs_encode_oracle

# frozen from the bitwise oracle: p(x) = 0x61 + 0x62 x at 0, 1, 2, 4
FROZEN_AB_W4 = [0x61, 0x03, 0xA5, 0xF4]


# ---------------------------------------------------------------- fields


def test_gf256_multiplication_matches_bitwise_oracle_exhaustively():
    F = gf(1)
    a, b = np.meshgrid(np.arange(256), np.arange(256), indexing="ij")
    table = F.mul(a, b)
    oracle = np.array([[gf_mul_bitwise(x, y, 8, 0x11D) for y in range(256)] for x in range(256)])
    assert np.array_equal(table, oracle)


def test_gf256_axioms_exhaustive():
    F = gf(1)
    elems = np.arange(256)
    a, b = np.meshgrid(elems, elems, indexing="ij")
    ab = F.mul(a, b)
    assert np.array_equal(ab, ab.T)  # commutative
    assert np.array_equal(F.mul(elems, 1), elems)
    assert np.all(F.mul(elems, 0) == 0)
    # distributivity over xor, for every (a, b, c)
    for c in range(256):
        assert np.array_equal(F.mul(a, b ^ c), ab ^ F.mul(a, c))
    # associativity, for every (a, b, c)
    for c in range(256):
        assert np.array_equal(F.mul(ab, c), F.mul(a, F.mul(b, c)))
    nz = elems[1:]
    assert np.all(F.mul(nz, F.inv(nz)) == 1)
    with pytest.raises(ZeroDivisionError):
        F.inv(0)


def test_gf65536_spot_checks():
    F = gf(2)
    rng = np.random.default_rng(0)
    a = rng.integers(0, 65536, 300)
    b = rng.integers(0, 65536, 300)
    got = F.mul(a, b)
    for x, y, z in zip(a.tolist(), b.tolist(), got.tolist()):
        assert z == gf_mul_bitwise(x, y, 16, 0x1100B)
    nz = a[a != 0]
    assert np.all(F.mul(nz, F.inv(nz)) == 1)
    # 2 generates the whole multiplicative group
    assert len(set(F.exp[:65535].tolist())) == 65535


def test_unsupported_symbol_size():
    with pytest.raises(ValueError):
        gf(3)
    with pytest.raises(ValueError):
        RsParams(4, 3)


# ---------------------------------------------------------------- parameter selection


@pytest.mark.parametrize("d, expected", [(100, (200, 1)), (25, (50, 1)), (50, (100, 1)), (75, (150, 1)), (127, (254, 1)), (128, (128, 2))])
def test_choose_wu(d, expected):
    assert choose_wu(d) == expected


@given(st.integers(1, 60000))
def test_choose_wu_constraints(d):
    w, u = choose_wu(d)
    assert w % 2 == 0 and 2 * d <= w * u and w <= 2 ** (8 * u) - 1
    if u == 2:
        assert 2 * d > 255  # u = 1 could not fit


def test_choose_wu_errors():
    with pytest.raises(ValueError):
        choose_wu(0)
    with pytest.raises(ValueError):
        choose_wu(40_000_000)


def test_rs_params_validation():
    with pytest.raises(ValueError):
        RsParams(5)
    with pytest.raises(ValueError):
        RsParams(256, 1)
    with pytest.raises(ValueError):
        RsParams(10, 1, 6)
    p = RsParams(10)
    assert p.d == 5 and p.message_symbols == 5 and p.capacity == 5
    assert RsParams.for_item_size(128) == RsParams(128, 2, 128)


# ---------------------------------------------------------------- encoding


def test_evaluation_points():
    pts = evaluation_points(1, 8)
    assert pts.tolist() == [0, 1, 2, 4, 8, 16, 32, 64]
    assert len(set(evaluation_points(1, 255).tolist())) == 255
    assert len(set(evaluation_points(2, 1000).tolist())) == 1000


def test_frozen_codeword():
    p = RsParams(4, 1)
    assert rs_encode_oracle(b"ab", 4) == FROZEN_AB_W4
    assert rs_encode(b"ab", p).tolist() == FROZEN_AB_W4


@given(st.binary(min_size=0, max_size=20), st.sampled_from([4, 8, 20, 40]))
def test_encode_matches_oracle(msg, w):
    msg = msg[: w // 2]
    assert rs_encode(msg, RsParams(w, 1)).tolist() == rs_encode_oracle(msg, w)


def test_zero_message_and_length_errors():
    assert not np.any(rs_encode(b"\0" * 10, RsParams(20)))
    with pytest.raises(ValueError):
        rs_encode(b"x" * 11, RsParams(20))


def test_two_byte_symbols_are_big_endian():
    p = RsParams(4, 2)
    cw = rs_encode(b"\x12\x34\x56\x78", p)
    # point 0 evaluates to the constant coefficient
    assert cw[0] == 0x1234
    assert rs_erasure_decode(cw, p) == b"\x12\x34\x56\x78"


# ---------------------------------------------------------------- erasure decoding


@pytest.mark.parametrize("w", [2, 4, 6, 8])
def test_all_erasure_patterns_small_codes(w):
    p = RsParams(w, 1)
    rng = np.random.default_rng(w)
    msgs = [bytes(w // 2), bytes([255] * (w // 2))] + [rng.bytes(w // 2) for _ in range(3)]
    for msg in msgs:
        cw = rs_encode(msg, p)
        for mask in itertools.product((False, True), repeat=w):
            r = cw.copy()
            r[list(mask)] = ERASED
            survivors = w - sum(mask)
            if survivors >= w // 2:
                assert rs_erasure_decode(r, p) == msg
            else:
                with pytest.raises(ErasureDecodeError):
                    rs_erasure_decode(r, p)


@settings(max_examples=60)
@given(st.data())
def test_round_trip_random_patterns(data):
    u = data.draw(st.sampled_from([1, 2]))
    w = data.draw(st.integers(1, 100)) * 2 if u == 1 else data.draw(st.integers(1, 150)) * 2
    w = min(w, 254) if u == 1 else w
    p = RsParams(w, u)
    msg = data.draw(st.binary(min_size=p.capacity, max_size=p.capacity))
    n_erase = data.draw(st.integers(0, w // 2))
    erase = data.draw(st.permutations(range(w)))[:n_erase]
    r = rs_encode(msg, p)
    r[list(erase)] = ERASED
    assert rs_erasure_decode(r, p) == msg


def test_large_code_uses_streaming_interpolation():
    p = RsParams(600, 2)
    rng = np.random.default_rng(1)
    msg = rng.bytes(p.capacity)
    r = rs_encode(msg, p)
    r[rng.choice(600, 300, replace=False)] = ERASED
    assert rs_erasure_decode(r, p) == msg


def test_one_too_many_erasures():
    p = RsParams(20)
    r = rs_encode(b"hello", p)
    r[:11] = ERASED
    with pytest.raises(ErasureDecodeError):
        rs_erasure_decode(r, p)


def test_decoder_input_validation():
    p = RsParams(4)
    with pytest.raises(ValueError):
        rs_erasure_decode([1, 2, 3], p)
    with pytest.raises(ValueError):
        rs_erasure_decode([1, BLANK, 3, 4], p)
    with pytest.raises(ValueError):
        rs_erasure_decode([1, 2, 300, 4], p)


def test_decode_is_unique():
    # distinct messages give distinct codewords (degree bound)
    p = RsParams(4)
    seen = {}
    for a in range(256):
        for b in (0, 1, 77, 255):
            cw = tuple(rs_encode(bytes([a, b]), p).tolist())
            assert cw not in seen
            seen[cw] = (a, b)


def test_corrupted_symbol_caught_by_crc():
    p = RsParams(40, 1, 20)
    item = crc_append(b"sixteen byte msg")
    cw = rs_encode(item.to_bytes(), p)
    cw[:20] = ERASED
    cw[25] ^= 0x5A
    raw = rs_erasure_decode(cw, p)
    assert raw != item.to_bytes()
    assert not crc_check(DataItem.from_bytes(raw[: p.d]))


# ---------------------------------------------------------------- CRC


def test_crc_reference_values():
    assert crc32(b"123456789") == 0xCBF43926 == crc32_bitwise(b"123456789")
    assert crc32(b"") == 0 == crc32_bitwise(b"")


@given(st.binary(max_size=200))
def test_crc_matches_bitwise_oracle(data):
    assert crc32(data) == crc32_bitwise(data)


@given(st.binary(min_size=1, max_size=100), st.data())
def test_crc_detects_single_bit_flips(payload, data):
    item = crc_append(payload)
    assert crc_check(item)
    bit = data.draw(st.integers(0, 8 * len(payload) - 1))
    flipped = bytearray(payload)
    flipped[bit // 8] ^= 1 << (bit % 8)
    assert not crc_check(DataItem(bytes(flipped), item.crc))


def test_data_item_framing():
    item = crc_append(b"abc")
    assert item.size == 7
    raw = item.to_bytes()
    assert raw[-4:] == crc32(b"abc").to_bytes(4, "big")
    assert DataItem.from_bytes(raw) == item
    with pytest.raises(ValueError):
        DataItem.from_bytes(b"abc")
