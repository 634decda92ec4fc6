import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qia_lab.hashfam import (
    HashFunction,
    InputLengthError,
    Nonce,
    bits_to_int,
    hash_all_keys,
    hash_inputs,
    hash_key_range,
    int_to_bits,
    sample_hash,
    sample_nonce,
)
from qia_lab.rng import Rng


def oracle(seed, x_bits, d):
    """Nested-loop GF(2) evaluation straight from the Toeplitz definition."""
    n = len(x_bits)
    strip_len = n + 2 * d - 1
    digest = hashlib.shake_256(b"qia-lab-toeplitz" + seed.to_bytes(8, "little"))
    raw = int.from_bytes(digest.digest((strip_len + 2 * d + 7) // 8), "little")
    m = [(raw >> p) & 1 for p in range(strip_len)]
    c = [((raw >> strip_len) >> (2 * d - 1 - t)) & 1 for t in range(2 * d)]
    out = []
    for t in range(2 * d):
        acc = 0
        for j in range(n):
            acc ^= m[t - j + n - 1] & x_bits[j]
        out.append(acc ^ c[t])
    return tuple(out)


def test_frozen_vector():
    H = HashFunction(0xDEADBEEF, 8, 2)
    x = (1, 0, 1, 1, 0, 0, 1, 0)
    assert oracle(0xDEADBEEF, x, 2) == (1, 1, 0, 0)
    assert H(x) == (1, 1, 0, 0)
    assert H.strip() == (1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0)
    assert H.offset_bits() == (1, 0, 1, 0)


@settings(max_examples=200)
@given(st.integers(0, 2**64 - 1), st.integers(1, 40), st.integers(1, 8), st.data())
def test_matches_oracle(seed, n, d, data):
    x = tuple(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    assert HashFunction(seed, n, d)(x) == oracle(seed, x, d)


@given(st.integers(0, 2**64 - 1), st.integers(1, 30), st.integers(1, 6))
def test_matrix_is_toeplitz_and_matches_eval(seed, n, d):
    H = HashFunction(seed, n, d)
    T = H.matrix()
    assert T.shape == (2 * d, n)
    assert np.array_equal(T[1:, 1:], T[:-1, :-1])
    x = np.array(int_to_bits(seed % (1 << n), n), dtype=np.uint8)
    y = (T.astype(int) @ x + np.array(H.offset_bits())) % 2
    assert tuple(int(v) for v in y) == H(tuple(int(v) for v in x))


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**48 - 1), st.integers(0, 2**48 - 1),
       st.integers(0, 2**48 - 1))
def test_affinity(seed, x, y, z):
    H = HashFunction(seed, 48, 4)
    c = H.eval_int(0)
    assert H.eval_int(x ^ y) == H.eval_int(x) ^ H.eval_int(y) ^ c
    assert H.eval_int(x ^ y ^ z) == H.eval_int(x) ^ H.eval_int(y) ^ H.eval_int(z)


def test_wrong_length_rejected():
    H = HashFunction(1, 8, 2)
    with pytest.raises(InputLengthError):
        H((1, 0, 1))
    with pytest.raises(ValueError):
        HashFunction(1, 0, 2)
    with pytest.raises(ValueError):
        HashFunction(2**64, 8, 2)


def test_bit_helpers_round_trip():
    assert bits_to_int((1, 0, 1, 1)) == 0b1011
    assert int_to_bits(0b1011, 6) == (0, 0, 1, 0, 1, 1)


@given(st.integers(0, 2**64 - 1), st.integers(1, 12))
def test_vectorised_all_keys(seed, key_len):
    r = Rng(seed)
    nonce = sample_nonce(r, 20)
    H = sample_hash(r, 20 + key_len, 5)
    brute = [H.eval_int(hash_inputs(nonce, k, key_len)) for k in range(1 << key_len)]
    assert hash_key_range(H, nonce, key_len).tolist() == brute
    keys = np.array([3, 0, (1 << key_len) - 1], dtype=np.uint64) % (1 << key_len)
    assert hash_all_keys(H, nonce, keys, key_len).tolist() == [brute[int(k)] for k in keys]


def test_nonce():
    n = sample_nonce(Rng(0), 128)
    assert n.length == 128 and len(n.hex) == 32
    assert bits_to_int(n.bits) == n.value
    with pytest.raises(ValueError):
        Nonce(4, 2)


def test_equality_is_by_seed_and_shape():
    assert HashFunction(5, 10, 2) == HashFunction(5, 10, 2)
    assert HashFunction(5, 10, 2) != HashFunction(5, 10, 3)
    assert len({HashFunction(5, 10, 2), HashFunction(5, 10, 2)}) == 1


def test_collision_rate_small():
    # P[H(x) = H(y)] = 2^-2d for the affine Toeplitz family
    x, y = 0b1011, 0b0110
    n = 20000
    r = Rng(8)
    hits = 0
    for _ in range(n):
        H = sample_hash(r, 4, 2)
        hits += H.eval_int(x) == H.eval_int(y)
    p = 1 / 16
    assert abs(hits / n - p) < 4 * (p * (1 - p) / n) ** 0.5
