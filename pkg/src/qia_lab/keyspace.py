"""Candidate key spaces and survivor sets.

Exhaustive spaces enumerate every ``key_len``-bit key in ascending numeric
order and keep survivors in a packed bitset (candidate ``n`` is bit
``n % 8`` of byte ``n // 8``).  Explicit spaces hold a list of keys and keep
survivors as a frozenset.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

DEFAULT_KEYLEN_CAP = 24
_DUMP_MAGIC = b"QIAS"
_DUMP_HEADER = struct.Struct("<4sBBQ")


class KeySpaceError(ValueError):
    pass


def keylen_cap() -> int:
    return int(os.environ.get("QIA_KEYLEN_CAP", DEFAULT_KEYLEN_CAP))


@dataclass(frozen=True, eq=False)
class KeySpace:
    key_len: int
    keys: Optional[tuple[int, ...]] = None  # None means exhaustive

    def __post_init__(self) -> None:
        if self.key_len < 1:
            raise KeySpaceError("key_len must be >= 1")
        if self.keys is not None:
            keys = tuple(int(k) for k in self.keys)
            if len(set(keys)) != len(keys):
                raise KeySpaceError("explicit key list contains duplicates")
            if any(not 0 <= k < (1 << self.key_len) for k in keys):
                raise KeySpaceError("explicit key does not fit key_len")
            object.__setattr__(self, "keys", keys)

    @classmethod
    def exhaustive(cls, key_len: int) -> "KeySpace":
        return cls(key_len)

    @classmethod
    def explicit(cls, key_len: int, keys: Iterable[int]) -> "KeySpace":
        return cls(key_len, tuple(keys))

    @property
    def is_exhaustive(self) -> bool:
        return self.keys is None

    def __len__(self) -> int:
        return (1 << self.key_len) if self.keys is None else len(self.keys)

    def _check_cap(self) -> None:
        cap = keylen_cap()
        if self.is_exhaustive and self.key_len > cap:
            raise KeySpaceError(
                f"refusing to enumerate 2**{self.key_len} keys (cap is {cap}; "
                "raise QIA_KEYLEN_CAP to override)"
            )

    def enumerate(self) -> Iterator[int]:
        self._check_cap()
        if self.keys is None:
            yield from range(1 << self.key_len)
        else:
            yield from self.keys

    def as_array(self) -> np.ndarray:
        self._check_cap()
        if self.keys is None:
            return np.arange(1 << self.key_len, dtype=np.uint64)
        return np.array(self.keys, dtype=np.uint64)

    def index_of(self, key: int) -> int:
        if self.keys is None:
            if not 0 <= key < (1 << self.key_len):
                raise KeySpaceError("key outside key space")
            return key
        return self.keys.index(key)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KeySpace):
            return NotImplemented
        return self.key_len == other.key_len and self.keys == other.keys

    def __hash__(self) -> int:
        return hash((self.key_len, self.keys))


class SurvivorSet:
    """The candidates of a key space still consistent with what was observed."""

    def __init__(self, parent: KeySpace, *, bitset: Optional[np.ndarray] = None,
                 members: Optional[frozenset] = None) -> None:
        self.parent = parent
        if parent.is_exhaustive:
            if bitset is None:
                raise KeySpaceError("exhaustive survivor sets are stored as bitsets")
            nbytes = (len(parent) + 7) // 8
            if bitset.dtype != np.uint8 or bitset.shape != (nbytes,):
                raise KeySpaceError("bitset has the wrong shape")
            self._bits = bitset
            self._members = None
        else:
            if members is None:
                raise KeySpaceError("explicit survivor sets are stored as sets")
            if not members <= set(parent.keys):
                raise KeySpaceError("members outside the parent key space")
            self._bits = None
            self._members = frozenset(members)

    @classmethod
    def from_mask(cls, parent: KeySpace, alive: np.ndarray) -> "SurvivorSet":
        """Build from a boolean mask aligned with ``parent.enumerate()``."""
        alive = np.asarray(alive, dtype=bool)
        if alive.shape != (len(parent),):
            raise KeySpaceError("mask length does not match the key space")
        if parent.is_exhaustive:
            return cls(parent, bitset=np.packbits(alive, bitorder="little"))
        keys = np.array(parent.keys, dtype=np.uint64)[alive]
        return cls(parent, members=frozenset(int(k) for k in keys))

    @classmethod
    def full(cls, parent: KeySpace) -> "SurvivorSet":
        return cls.from_mask(parent, np.ones(len(parent), dtype=bool))

    @classmethod
    def from_keys(cls, parent: KeySpace, keys: Iterable[int]) -> "SurvivorSet":
        mask = np.zeros(len(parent), dtype=bool)
        for k in keys:
            mask[parent.index_of(int(k))] = True
        return cls.from_mask(parent, mask)

    def mask(self) -> np.ndarray:
        if self._bits is not None:
            return np.unpackbits(self._bits, count=len(self.parent), bitorder="little").astype(bool)
        return np.array([k in self._members for k in self.parent.keys], dtype=bool)

    def __len__(self) -> int:
        if self._bits is not None:
            return int(np.bitwise_count(self._bits).sum())
        return len(self._members)

    def __contains__(self, key: object) -> bool:
        key = int(getattr(key, "value", key))
        if self._bits is not None:
            if not 0 <= key < len(self.parent):
                return False
            return bool((self._bits[key >> 3] >> (key & 7)) & 1)
        return key in self._members

    def keys(self) -> list[int]:
        if self._bits is not None:
            return [int(k) for k in np.flatnonzero(self.mask())]
        return sorted(self._members)

    def __iter__(self) -> Iterator[int]:
        return iter(self.keys())

    def __and__(self, other: "SurvivorSet") -> "SurvivorSet":
        if self.parent != other.parent:
            raise KeySpaceError("survivor sets belong to different key spaces")
        if self._bits is not None:
            return SurvivorSet(self.parent, bitset=self._bits & other._bits)
        return SurvivorSet(self.parent, members=self._members & other._members)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SurvivorSet):
            return NotImplemented
        if self.parent != other.parent:
            return False
        if self._bits is not None:
            return bool(np.array_equal(self._bits, other._bits))
        return self._members == other._members

    def __repr__(self) -> str:
        return f"SurvivorSet({len(self)}/{len(self.parent)} of {self.parent.key_len}-bit keys)"

    def to_hex_list(self) -> list[str]:
        width = (self.parent.key_len + 3) // 4
        return [format(k, f"0{width}x") for k in self.keys()]

    def to_json(self) -> str:
        return json.dumps({"key_len": self.parent.key_len, "keys": self.to_hex_list()})

    def dump_bitset(self) -> bytes:
        """Header ``b"QIAS" | version u8 | key_len u8 | n_bits u64 LE`` then the bitset."""
        bits = self._bits if self._bits is not None else np.packbits(self.mask(), bitorder="little")
        return _DUMP_HEADER.pack(_DUMP_MAGIC, 1, self.parent.key_len, len(self.parent)) + bits.tobytes()

    @classmethod
    def load_bitset(cls, blob: bytes) -> "SurvivorSet":
        if len(blob) < _DUMP_HEADER.size:
            raise KeySpaceError("truncated bitset dump")
        magic, version, key_len, n_bits = _DUMP_HEADER.unpack_from(blob)
        if magic != _DUMP_MAGIC or version != 1:
            raise KeySpaceError("not a survivor bitset dump")
        if n_bits != 1 << key_len:
            raise KeySpaceError("bitset dumps describe exhaustive key spaces only")
        body = np.frombuffer(blob, dtype=np.uint8, offset=_DUMP_HEADER.size).copy()
        if body.size != (n_bits + 7) // 8:
            raise KeySpaceError("bitset length does not match header")
        return cls(KeySpace.exhaustive(key_len), bitset=body)


def enumerate_keys(ks: KeySpace) -> Iterator[int]:
    return ks.enumerate()


def survival_fraction(s: SurvivorSet) -> float:
    if len(s.parent) == 0:
        raise KeySpaceError("empty key space")
    return len(s) / len(s.parent)


def false_survival_fraction(s: SurvivorSet, true_key: int) -> float:
    """Fraction of the *wrong* candidates that survived."""
    n = len(s.parent)
    if n < 2:
        raise KeySpaceError("need at least two candidates")
    return (len(s) - (true_key in s)) / (n - 1)
