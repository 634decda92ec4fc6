import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qia_lab.keyspace import (
    DEFAULT_KEYLEN_CAP,
    KeySpace,
    KeySpaceError,
    SurvivorSet,
    false_survival_fraction,
    keylen_cap,
    survival_fraction,
)


def test_exhaustive_enumeration_order():
    ks = KeySpace.exhaustive(4)
    assert list(ks.enumerate()) == list(range(16))
    assert len(ks) == 16
    assert ks.index_of(9) == 9


def test_explicit_space():
    ks = KeySpace.explicit(8, [200, 3, 17])
    assert list(ks.enumerate()) == [200, 3, 17]
    assert ks.index_of(17) == 2
    with pytest.raises(KeySpaceError):
        KeySpace.explicit(8, [1, 1])
    with pytest.raises(KeySpaceError):
        KeySpace.explicit(4, [16])


def test_cap(monkeypatch):
    assert keylen_cap() == DEFAULT_KEYLEN_CAP
    with pytest.raises(KeySpaceError):
        list(KeySpace.exhaustive(30).enumerate())
    monkeypatch.setenv("QIA_KEYLEN_CAP", "10")
    with pytest.raises(KeySpaceError):
        KeySpace.exhaustive(11).as_array()
    assert KeySpace.exhaustive(10).as_array().size == 1024


masks = st.integers(1, 10).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.booleans(), min_size=1 << n, max_size=1 << n),
                        st.lists(st.booleans(), min_size=1 << n, max_size=1 << n)))


@given(masks)
def test_bitset_matches_set_semantics(case):
    n, m1, m2 = case
    ks = KeySpace.exhaustive(n)
    a, b = SurvivorSet.from_mask(ks, np.array(m1)), SurvivorSet.from_mask(ks, np.array(m2))
    sa = {k for k in range(1 << n) if m1[k]}
    sb = {k for k in range(1 << n) if m2[k]}
    assert set(a.keys()) == sa and len(a) == len(sa)
    assert set((a & b).keys()) == sa & sb
    assert all((k in a) == (k in sa) for k in range(1 << n))
    assert SurvivorSet.load_bitset(a.dump_bitset()) == a


@given(st.lists(st.integers(0, 255), unique=True, min_size=1, max_size=40), st.data())
def test_explicit_survivors(keys, data):
    ks = KeySpace.explicit(8, keys)
    m = data.draw(st.lists(st.booleans(), min_size=len(keys), max_size=len(keys)))
    s = SurvivorSet.from_mask(ks, np.array(m))
    assert set(s.keys()) == {k for k, alive in zip(keys, m) if alive}
    assert s.mask().tolist() == m


def test_dump_format():
    ks = KeySpace.exhaustive(4)
    s = SurvivorSet.from_keys(ks, [0, 9, 15])
    blob = s.dump_bitset()
    assert blob[:4] == b"QIAS" and blob[4] == 1 and blob[5] == 4
    assert int.from_bytes(blob[6:14], "little") == 16
    # candidate n is bit n % 8 of byte n // 8
    assert blob[14:] == bytes([0b00000001, 0b10000010])
    with pytest.raises(KeySpaceError):
        SurvivorSet.load_bitset(blob[:-1])
    with pytest.raises(KeySpaceError):
        SurvivorSet.load_bitset(b"XXXX" + blob[4:])


def test_fractions_and_json():
    ks = KeySpace.exhaustive(3)
    s = SurvivorSet.from_keys(ks, [1, 5])
    assert survival_fraction(s) == 0.25
    assert false_survival_fraction(s, 5) == pytest.approx(1 / 7)
    assert json.loads(s.to_json()) == {"key_len": 3, "keys": ["1", "5"]}
    assert len(SurvivorSet.full(ks)) == 8


def test_mismatched_parents():
    with pytest.raises(KeySpaceError):
        SurvivorSet.full(KeySpace.exhaustive(3)) & SurvivorSet.full(KeySpace.exhaustive(4))
