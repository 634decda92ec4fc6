import pytest
from hypothesis import given, settings, strategies as st

from conftest import small_params
from qia_lab.adversary import InterceptResend, UNIFORM
from qia_lab.hashfam import HashFunction, InputLengthError, sample_nonce
from qia_lab.protocol import (
    AUTH,
    DECOY,
    HongVerifier,
    Key,
    Outcome,
    ProtocolError,
    SessionParams,
    Transcript,
    Variant,
    alice_respond,
    bob_challenge,
    bob_measure,
    bob_verify,
    hong_mode_flow,
    make_challenge,
    pair,
    run_session,
    session_hash,
)
from qia_lab.rng import Rng

variants = st.sampled_from(list(Variant))


@settings(max_examples=60, deadline=None)
@given(variants, st.integers(1, 12), st.integers(0, 2**32))
def test_completeness(variant, d, seed):
    p = small_params(variant, d=d)
    r = Rng(seed)
    k = Key.random(r, p.key_len)
    assert run_session(k, k, p, rng=r).outcome is Outcome.ACCEPT


def test_qubits_follow_hash_pairs():
    p = small_params()
    r = Rng(1)
    k = Key.random(r, p.key_len)
    nonce, H = make_challenge(p, r)
    h = session_hash(H, nonce, k)
    states = [q.peek() for q in alice_respond(k, nonce, H)]
    bits = H.eval(nonce.bits + tuple((k.value >> (p.key_len - 1 - i)) & 1 for i in range(p.key_len)))
    assert states == [(bits[2 * i], bits[2 * i + 1]) for i in range(p.d)]
    assert states == [pair(h, p.d, i) for i in range(p.d)]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32))
def test_same_basis_value_mismatch_always_rejects(seed):
    p = small_params(d=4)
    r = Rng(seed)
    ka, kb = Key.random(r, 8), Key.random(r, 8)
    nonce, H = make_challenge(p, r)
    ha, hb = session_hash(H, nonce, ka), session_hash(H, nonce, kb)
    doomed = any(pair(ha, 4, i)[0] == pair(hb, 4, i)[0] and pair(ha, 4, i)[1] != pair(hb, 4, i)[1]
                 for i in range(4))
    out = bob_verify(kb, nonce, H, alice_respond(ka, nonce, H), r)
    if doomed:
        assert out is Outcome.REJECT


def test_short_circuit_leaves_rest_unmeasured():
    p = small_params(d=12)
    for seed in range(50):
        r = Rng(seed)
        ka, kb = Key.random(r, 8), Key.random(r, 8)
        nonce, H = make_challenge(p, r)
        recs, out = bob_measure(kb, nonce, H, alice_respond(ka, nonce, H), r, short_circuit=True)
        if out is Outcome.REJECT:
            first_none = next((i for i, (_, s) in enumerate(recs) if s is None), None)
            if first_none is not None:
                assert all(s is None for _, s in recs[first_none:])
            return
    pytest.fail("no rejecting session found")


def test_full_measurement_by_default():
    p = small_params(d=12)
    r = Rng(3)
    ka, kb = Key.random(r, 8), Key.random(r, 8)
    tr = run_session(ka, kb, p, rng=r)
    assert all(e.bob_outcome is not None for e in tr.events)


def test_alice_nonce_variant_rejects_bob_challenge():
    with pytest.raises(ProtocolError):
        bob_challenge(small_params(Variant.ALICE_NONCE), Rng(0))


def test_message_origin_per_variant():
    r = Rng(0)
    k = Key.random(r, 8)
    tr = run_session(k, k, small_params(Variant.ALICE_NONCE), rng=r)
    assert tr.classical_messages[0]["type"] == "NONCE_HASH_FROM_ALICE"
    assert tr.classical_messages[0]["from"] == "alice"
    tr = run_session(k, k, small_params(Variant.BOB_NONCE), rng=r)
    assert tr.classical_messages[0]["type"] == "CHALLENGE"
    assert tr.classical_messages[-1] == {"type": "RESULT", "from": "bob", "outcome": "Accept"}


def test_hash_input_length_checked():
    k = Key(3, 8)
    nonce = sample_nonce(Rng(0), 16)
    with pytest.raises(InputLengthError):
        alice_respond(k, nonce, HashFunction(1, 30, 4))


def test_params_validation():
    with pytest.raises(ValueError):
        SessionParams(d=0)
    with pytest.raises(ValueError):
        SessionParams(variant=Variant.HONG_DECOY, decoy_prob=1.0)
    with pytest.raises(ValueError):
        SessionParams(decoy_prob=-0.1)
    with pytest.raises(ValueError):
        Key(256, 8)
    with pytest.raises(ValueError):
        run_session(Key(1, 4), Key(1, 4), small_params())
    p = SessionParams(variant="HongDecoy", decoy_prob=0.3)
    assert SessionParams.from_dict(p.to_dict()) == p


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.0, 0.9))
def test_hong_flow_counts(seed, prob):
    p = small_params(Variant.HONG_DECOY, d=5, decoy_prob=prob)
    r = Rng(seed)
    k = Key.random(r, 8)
    nonce, H = make_challenge(p, r)
    txs = list(hong_mode_flow(k, nonce, H, p, r))
    auth = [t for t in txs if t.mode == AUTH]
    assert [t.index for t in auth] == list(range(5))
    assert [t.position for t in txs] == list(range(len(txs)))
    assert txs[-1].mode == AUTH
    if prob == 0.0:
        assert len(txs) == 5


def test_hong_decoy_rate():
    p = small_params(Variant.HONG_DECOY, d=16, decoy_prob=0.5)
    r = Rng(11)
    k = Key.random(r, 8)
    decoys = total = 0
    for _ in range(200):
        tr = run_session(k, k, p, rng=r.spawn("s", total))
        decoys += sum(e.mode == DECOY for e in tr.events)
        total += 1
    # negative binomial: mean decoys per session = d * p / (1 - p) = 16
    assert 14.0 < decoys / total < 18.0


def test_hong_verifier_ordering():
    p = small_params(Variant.HONG_DECOY, d=2)
    r = Rng(0)
    k = Key.random(r, 8)
    nonce, H = make_challenge(p, r)
    v = HongVerifier(k, nonce, H, r)
    with pytest.raises(ProtocolError):
        v.on_announce(AUTH)
    qs = alice_respond(k, nonce, H)
    v.receive(qs[0])
    with pytest.raises(ProtocolError):
        v.receive(qs[1])
    v.on_announce(AUTH)
    with pytest.raises(ProtocolError):
        v.outcome()
    v.receive(qs[1])
    assert v.on_announce(AUTH)[2] == 1
    assert v.outcome() is Outcome.ACCEPT


def test_hong_eve_keeps_auth_only():
    p = small_params(Variant.HONG_DECOY, d=8, decoy_prob=0.5)
    r = Rng(21)
    k = Key.random(r, 8)
    eve = InterceptResend(UNIFORM)
    tr = run_session(k, k, p, eve, r)
    cap = eve.captures[0]
    assert len(cap.observations) == 8
    assert cap.discarded_decoys == sum(e.mode == DECOY for e in tr.events)
    auth = [e for e in tr.events if e.mode == AUTH]
    assert [(o.meas_basis, o.outcome) for o in cap.observations] == [
        (e.adversary["basis"], e.adversary["outcome"]) for e in auth
    ]


@settings(max_examples=30, deadline=None)
@given(variants, st.integers(0, 2**32), st.booleans())
def test_transcript_round_trip_and_determinism(variant, seed, attacked):
    p = small_params(variant, d=4)
    k = Key.random(Rng(seed), 8)
    kb = Key.random(Rng(seed + 1), 8)
    a = run_session(k, kb, p, InterceptResend(UNIFORM) if attacked else None, Rng(seed))
    b = run_session(k, kb, p, InterceptResend(UNIFORM) if attacked else None, Rng(seed))
    assert a == b
    assert Transcript.from_json(a.to_json()) == a
    assert a.to_dict()["simulation_only_fields"] == ["prepared"]


def test_record_flag_does_not_change_outcome():
    p = small_params(Variant.HONG_DECOY, d=6)
    for s in range(30):
        r1, r2 = Rng(s), Rng(s)
        ka, kb = Key.random(Rng(s + 100), 8), Key.random(Rng(s + 200), 8)
        assert run_session(ka, kb, p, rng=r1).outcome == run_session(ka, kb, p, rng=r2, record=False).outcome
