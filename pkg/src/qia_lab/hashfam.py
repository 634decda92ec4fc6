"""Affine Toeplitz hashing over GF(2) and nonce generation.

A family member maps N input bits to 2d output bits as ``T x + c`` where
``T`` is a 2d x N Toeplitz matrix (``T[t][j] = m[t - j + N - 1]`` for a
strip ``m`` of N + 2d - 1 bits) and ``c`` is a 2d-bit offset.  Both are
expanded from a 64-bit seed with SHAKE-256, so a function travels as
``(seed, in_len, d)`` and anybody can rebuild it.

Bit strings are carried as Python ints, most significant bit first: bit 0
of a string of length n is ``(x >> (n - 1)) & 1``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import Rng


def bits_to_int(bits: Sequence[int]) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | (int(b) & 1)
    return out


def int_to_bits(x: int, n: int) -> tuple[int, ...]:
    return tuple((x >> (n - 1 - i)) & 1 for i in range(n))


class InputLengthError(ValueError):
    pass


@dataclass(frozen=True)
class Nonce:
    value: int
    length: int = 128

    def __post_init__(self) -> None:
        if self.length < 1 or not 0 <= self.value < (1 << self.length):
            raise ValueError("nonce value does not fit its length")

    @property
    def bits(self) -> tuple[int, ...]:
        return int_to_bits(self.value, self.length)

    @property
    def hex(self) -> str:
        return format(self.value, f"0{(self.length + 3) // 4}x")


def sample_nonce(rng: Rng, length: int = 128) -> Nonce:
    if length < 1:
        raise ValueError("nonce length must be >= 1")
    return Nonce(rng.bits(length), length)


def _expand(seed: int, nbits: int) -> int:
    digest = hashlib.shake_256(b"qia-lab-toeplitz" + seed.to_bytes(8, "little"))
    raw = int.from_bytes(digest.digest((nbits + 7) // 8), "little")
    return raw & ((1 << nbits) - 1)


class HashFunction:
    """One member of the affine Toeplitz family, fully determined by its seed."""

    __slots__ = ("seed", "in_len", "d", "matrix_bits", "offset", "_rows")

    def __init__(self, seed: int, in_len: int, d: int) -> None:
        if in_len < 1 or d < 1:
            raise ValueError("in_len and d must be >= 1")
        if not 0 <= seed < (1 << 64):
            raise ValueError("hash seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.in_len = in_len
        self.d = d
        out_len = 2 * d
        strip_len = in_len + out_len - 1
        raw = _expand(seed, strip_len + out_len)
        # strip bit p (m[p]) lives at integer bit p
        strip = raw & ((1 << strip_len) - 1)
        self.matrix_bits = strip
        self.offset = raw >> strip_len
        mask = (1 << in_len) - 1
        # row t, read MSB-first against the input, is the strip window at t
        self._rows = tuple((strip >> t) & mask for t in range(out_len))

    def __repr__(self) -> str:
        return f"HashFunction(seed={self.seed}, in_len={self.in_len}, d={self.d})"

    @property
    def out_len(self) -> int:
        return 2 * self.d

    def strip(self) -> tuple[int, ...]:
        """The Toeplitz diagonal strip m[0..N+2d-2]."""
        n = self.in_len + self.out_len - 1
        return tuple((self.matrix_bits >> p) & 1 for p in range(n))

    def offset_bits(self) -> tuple[int, ...]:
        return int_to_bits(self.offset, self.out_len)

    def matrix(self) -> np.ndarray:
        """The 2d x N Toeplitz matrix as a uint8 array."""
        m = np.array(self.strip(), dtype=np.uint8)
        t = np.arange(self.out_len)[:, None]
        j = np.arange(self.in_len)[None, :]
        return m[t - j + self.in_len - 1]

    def eval_int(self, x: int) -> int:
        """Hash an N-bit input given as an MSB-first int."""
        out = 0
        for row in self._rows:
            out = (out << 1) | ((row & x).bit_count() & 1)
        return out ^ self.offset

    def __call__(self, bits: Sequence[int]) -> tuple[int, ...]:
        if len(bits) != self.in_len:
            raise InputLengthError(f"expected {self.in_len} input bits, got {len(bits)}")
        return int_to_bits(self.eval_int(bits_to_int(bits)), self.out_len)

    eval = __call__

    def key_columns(self, key_len: int) -> np.ndarray:
        """Output contribution of each trailing input bit, LSB of the key first.

        Entry q is the packed output (MSB-first) produced by an input whose
        only set bit is integer bit q, i.e. key bit ``key_len - 1 - q``.
        """
        if key_len > self.in_len:
            raise ValueError("key_len exceeds hash input length")
        if self.out_len > 64:
            raise ValueError("vectorised evaluation supports at most 64 output bits")
        cols = np.zeros(key_len, dtype=np.uint64)
        for q in range(key_len):
            cols[q] = self.eval_int(1 << q) ^ self.offset
        return cols

    def describe(self) -> dict:
        return {"seed": self.seed, "in_len": self.in_len, "d": self.d}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HashFunction):
            return NotImplemented
        return (self.seed, self.in_len, self.d) == (other.seed, other.in_len, other.d)

    def __hash__(self) -> int:
        return hash((self.seed, self.in_len, self.d))


def sample_hash(rng: Rng, in_len: int, d: int) -> HashFunction:
    return HashFunction(rng.seed64(), in_len, d)


def hash_inputs(nonce: Nonce, key_value: int, key_len: int) -> int:
    """The packed input r || k."""
    return (nonce.value << key_len) | key_value


def hash_all_keys(H: HashFunction, nonce: Nonce, keys: np.ndarray, key_len: int) -> np.ndarray:
    """Packed H(r || k) for every key value in ``keys`` (uint64 array)."""
    if nonce.length + key_len != H.in_len:
        raise InputLengthError("nonce and key lengths do not match the hash input")
    base = np.uint64(H.eval_int(nonce.value << key_len))
    out = np.full(keys.shape, base, dtype=np.uint64)
    keys = keys.astype(np.uint64, copy=False)
    for q, col in enumerate(H.key_columns(key_len)):
        sel = ((keys >> np.uint64(q)) & np.uint64(1)).astype(bool)
        out[sel] ^= col
    return out


def hash_key_range(H: HashFunction, nonce: Nonce, key_len: int) -> np.ndarray:
    """Packed hashes of all 2**key_len keys in ascending order (doubling)."""
    if nonce.length + key_len != H.in_len:
        raise InputLengthError("nonce and key lengths do not match the hash input")
    out = np.array([H.eval_int(nonce.value << key_len)], dtype=np.uint64)
    for col in H.key_columns(key_len):
        out = np.concatenate((out, out ^ col))
    return out
