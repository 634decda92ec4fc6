"""Deterministic, splittable random streams.

A stream is a 64-bit root seed plus the sequence of ``spawn`` calls that
led to it (``Rng(7).spawn("session", 3).spawn("bob")``).  The root key is
``BLAKE2b-256(seed)``; each ``spawn(*labels)`` call extends it as
``key' = BLAKE2b-256(encode(labels), key=key)``.  Output blocks are
``BLAKE2b-512(counter, key=stream_key)`` for counter = 0, 1, 2, ...;
bits are consumed least-significant first from each 512-bit block.  The
construction is counter based, so any stream can be re-derived from its
seed and spawn path alone and independent streams never share state.
Keys are derived lazily, on the first draw.
"""

from __future__ import annotations

import hashlib

_BLOCK_BITS = 512
_MASK64 = (1 << 64) - 1


def _encode_label(label: object) -> bytes:
    if type(label) is str:
        raw = label.encode()
        return b"s%d:" % len(raw) + raw
    if type(label) is int:
        return b"i%d;" % label
    raise TypeError(f"unsupported stream label: {label!r}")


def _child_key(key: bytes, labels: tuple) -> bytes:
    data = b"".join([_encode_label(x) for x in labels])
    return hashlib.blake2b(data, key=key, digest_size=32).digest()


class Rng:
    """A reproducible bit stream keyed by a seed and a spawn path."""

    __slots__ = ("seed", "path", "_key", "_pending", "_counter", "_buf", "_avail")

    def __init__(self, seed: int) -> None:
        if not 0 <= seed <= _MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        key = hashlib.blake2b(
            seed.to_bytes(8, "little"), digest_size=32, person=b"qia-lab-rng"
        ).digest()
        self._init(seed, (), key, ())

    def _init(self, seed: int, path: tuple, key: bytes, pending: tuple) -> None:
        self.seed = seed
        self.path = path  # one tuple of labels per spawn call
        self._key = key
        self._pending = pending  # label groups not yet folded into _key
        self._counter = 0
        self._buf = 0
        self._avail = 0

    def spawn(self, *labels: object) -> "Rng":
        """Derive an independent child stream; does not advance this one."""
        if not labels:
            raise ValueError("spawn needs at least one label")
        for x in labels:
            _encode_label(x)
        if self._pending:
            # fold shared ancestry once instead of once per sibling
            self._resolve()
        child = Rng.__new__(Rng)
        child._init(self.seed, self.path + (labels,), self._key, self._pending + (labels,))
        return child

    def _resolve(self) -> None:
        key = self._key
        for group in self._pending:
            key = _child_key(key, group)
        self._key = key
        self._pending = ()

    def _refill(self) -> None:
        if self._pending:
            self._resolve()
        block = hashlib.blake2b(
            self._counter.to_bytes(8, "little"), key=self._key, digest_size=64
        ).digest()
        self._counter += 1
        self._buf |= int.from_bytes(block, "little") << self._avail
        self._avail += _BLOCK_BITS

    def bits(self, n: int) -> int:
        """Return an ``n``-bit uniform integer."""
        if n < 0:
            raise ValueError("n must be non-negative")
        while self._avail < n:
            self._refill()
        out = self._buf & ((1 << n) - 1)
        self._buf >>= n
        self._avail -= n
        return out

    def bit(self) -> int:
        if not self._avail:
            self._refill()
        out = self._buf & 1
        self._buf >>= 1
        self._avail -= 1
        return out

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of resolution."""
        return self.bits(53) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Uniform integer in ``range(n)`` by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        width = (n - 1).bit_length()
        while True:
            x = self.bits(width)
            if x < n:
                return x

    def bernoulli(self, p: float) -> bool:
        """True with probability ``p`` (resolved to 2**-32)."""
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return self.bits(32) < p * 4294967296.0

    def seed64(self) -> int:
        return self.bits(64)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path!r})"
