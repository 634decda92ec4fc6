"""Prover/verifier logic for hash-based quantum identity authentication.

Bob (verifier) and Alice (prover) share a key.  A session binds a nonce
``r`` and a hash ``H`` from the affine Toeplitz family; Alice sends one
qubit per pair of bits of ``h_a = H(r || k_a)`` (first bit = basis, second
bit = value) and Bob measures each in the basis given by ``h_b`` and
accepts iff every outcome matches the value bit.

Three variants are simulated:

* ``BOB_NONCE``   - Bob draws ``(r, H)`` and sends them to Alice.
* ``ALICE_NONCE`` - Alice draws ``(r, H)`` and sends them with the qubits.
* ``HONG_DECOY``  - Bob's challenge, but before each transmission Alice
  flips a ``decoy_prob`` coin and sends either a random decoy or the next
  authentication qubit, announcing the mode only after Bob has the qubit.

Pairs are numbered from 0: pair i is bits 2i (basis) and 2i+1 (value) of the hash.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterator, Optional, Protocol

from .hashfam import HashFunction, InputLengthError, Nonce, hash_inputs, sample_hash, sample_nonce
from .qstate import Qubit, embed, measure, random_qubit
from .rng import Rng


class Variant(str, Enum):
    BOB_NONCE = "ZawadzkiBobNonce"
    ALICE_NONCE = "ZawadzkiAliceNonce"
    HONG_DECOY = "HongDecoy"


class Outcome(str, Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"


AUTH = "auth"
DECOY = "decoy"


class ProtocolError(RuntimeError):
    """A party was driven outside its contract."""


@dataclass(frozen=True)
class SessionParams:
    key_len: int = 16
    nonce_len: int = 128
    d: int = 16
    variant: Variant = Variant.BOB_NONCE
    decoy_prob: float = 0.5
    short_circuit: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.d < 1 or self.key_len < 1 or self.nonce_len < 1:
            raise ValueError("d, key_len and nonce_len must be >= 1")
        if not 0.0 <= self.decoy_prob <= 1.0:
            raise ValueError("decoy_prob must lie in [0, 1]")
        if self.variant is Variant.HONG_DECOY and self.decoy_prob >= 1.0:
            # every transmission would be a decoy and the session never ends
            raise ValueError("HongDecoy needs decoy_prob < 1")

    @property
    def hash_in_len(self) -> int:
        return self.nonce_len + self.key_len

    def to_dict(self) -> dict:
        out = asdict(self)
        out["variant"] = self.variant.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SessionParams":
        return cls(**data)


@dataclass(frozen=True)
class Key:
    value: int
    length: int

    def __post_init__(self) -> None:
        if self.length < 1 or not 0 <= self.value < (1 << self.length):
            raise ValueError("key value does not fit its length")

    @classmethod
    def random(cls, rng: Rng, length: int) -> "Key":
        return cls(rng.bits(length), length)

    @property
    def hex(self) -> str:
        return format(self.value, f"0{(self.length + 3) // 4}x")


def pair(h: int, d: int, i: int) -> tuple[int, int]:
    """(basis bit, value bit) of the i-th pair (0-based) of a packed 2d-bit hash."""
    shift = 2 * (d - 1 - i)
    return (h >> (shift + 1)) & 1, (h >> shift) & 1


def session_hash(H: HashFunction, r: Nonce, key: Key) -> int:
    if H.in_len != r.length + key.length:
        raise InputLengthError(
            f"hash takes {H.in_len} bits, nonce||key has {r.length + key.length}"
        )
    return H.eval_int(hash_inputs(r, key.value, key.length))


def make_challenge(params: SessionParams, rng: Rng) -> tuple[Nonce, HashFunction]:
    r = sample_nonce(rng, params.nonce_len)
    H = sample_hash(rng, params.hash_in_len, params.d)
    return r, H


def bob_challenge(params: SessionParams, rng: Rng) -> tuple[Nonce, HashFunction]:
    if params.variant is Variant.ALICE_NONCE:
        raise ProtocolError("in the Alice-nonce variant Alice generates r and H")
    return make_challenge(params, rng)


def alice_respond(k_a: Key, r: Nonce, H: HashFunction) -> list[Qubit]:
    h_a = session_hash(H, r, k_a)
    return [embed(*pair(h_a, H.d, i)) for i in range(H.d)]


def bob_measure(
    k_b: Key, r: Nonce, H: HashFunction, qubits: list[Qubit], rng: Rng,
    short_circuit: bool = False,
) -> tuple[list[tuple[int, Optional[int]]], Outcome]:
    """Bob's (basis, outcome) for each authentication qubit, and his verdict.

    Every qubit is measured before the verdict is formed.  With
    ``short_circuit`` the qubits after the first mismatch are left
    unmeasured and reported with outcome ``None``.
    """
    d = H.d
    if len(qubits) != d:
        raise ProtocolError(f"expected {d} qubits, got {len(qubits)}")
    h_b = session_hash(H, r, k_b)
    records: list[tuple[int, Optional[int]]] = []
    failed = False
    shift = 2 * d
    for q in qubits:
        shift -= 2
        basis = (h_b >> (shift + 1)) & 1
        if failed and short_circuit:
            records.append((basis, None))
            continue
        s, _ = measure(q, basis, rng)
        records.append((basis, s))
        if s != (h_b >> shift) & 1:
            failed = True
    return records, (Outcome.REJECT if failed else Outcome.ACCEPT)


def bob_verify(
    k_b: Key, r: Nonce, H: HashFunction, qubits: list[Qubit], rng: Rng,
    short_circuit: bool = False,
) -> Outcome:
    return bob_measure(k_b, r, H, qubits, rng, short_circuit)[1]


@dataclass(slots=True)
class Transmission:
    """One qubit sent in the decoy variant; ``mode`` is Alice's secret until announced."""

    position: int
    qubit: Qubit
    mode: str
    index: Optional[int]


def hong_mode_flow(
    k_a: Key, r: Nonce, H: HashFunction, params: SessionParams, rng: Rng
) -> Iterator[Transmission]:
    """Alice's side of the decoy variant.

    Yields transmissions in order until ``d`` authentication qubits have
    been produced.  Consumers must deliver each qubit before publishing its
    ``mode``; the generator does not advance until asked for the next one.
    """
    if params.variant is not Variant.HONG_DECOY:
        raise ProtocolError("hong_mode_flow requires the HongDecoy variant")
    h_a = session_hash(H, r, k_a)
    d = H.d
    p = params.decoy_prob
    sent_auth = 0
    position = 0
    while sent_auth < d:
        if rng.bernoulli(p):
            yield Transmission(position, random_qubit(rng), DECOY, None)
        else:
            shift = 2 * (d - 1 - sent_auth)
            q = embed((h_a >> (shift + 1)) & 1, (h_a >> shift) & 1)
            yield Transmission(position, q, AUTH, sent_auth)
            sent_auth += 1
        position += 1


class AdversaryStrategy(Protocol):
    """What a party sitting on the quantum channel must provide."""

    def begin_session(self, r: Nonce, H: HashFunction, params: SessionParams) -> None: ...

    def intercept(self, qubit: Qubit, position: int, rng: Rng) -> tuple[Qubit, Optional[dict]]: ...

    def announce(self, position: int, mode: str) -> None: ...

    def end_session(self) -> None: ...


@dataclass(slots=True)
class QubitEvent:
    position: int
    index: Optional[int]
    mode: Optional[str]
    prepared: Optional[tuple[int, int]]  # simulation-only ground truth
    adversary: Optional[dict]
    bob_basis: Optional[int]
    bob_outcome: Optional[int]

    def to_dict(self) -> dict:
        return {
            "position": self.position,
            "index": self.index,
            "mode": self.mode,
            "prepared": None if self.prepared is None else list(self.prepared),
            "adversary": self.adversary,
            "bob_basis": self.bob_basis,
            "bob_outcome": self.bob_outcome,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QubitEvent":
        return cls(
            data["position"], data["index"], data["mode"],
            None if data["prepared"] is None else tuple(data["prepared"]),
            data["adversary"], data["bob_basis"], data["bob_outcome"],
        )


@dataclass
class Transcript:
    params: SessionParams
    nonce: Optional[Nonce] = None
    hash_seed: Optional[int] = None
    events: list[QubitEvent] = field(default_factory=list)
    outcome: Optional[Outcome] = None
    classical_messages: list[dict] = field(default_factory=list)
    aborted: Optional[str] = None

    SCHEMA_VERSION = 1
    # fields that describe the simulation's ground truth, not anything on a channel
    SIMULATION_ONLY = ("prepared",)

    @property
    def auth_events(self) -> list[QubitEvent]:
        return [e for e in self.events if e.index is not None]

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPT

    def to_dict(self) -> dict:
        return {
            "schema_version": self.SCHEMA_VERSION,
            "params": self.params.to_dict(),
            "nonce_hex": self.nonce.hex if self.nonce else None,
            "hash_seed": self.hash_seed,
            "events": [e.to_dict() for e in self.events],
            "outcome": self.outcome.value if self.outcome else None,
            "classical_messages": self.classical_messages,
            "aborted": self.aborted,
            "simulation_only_fields": list(self.SIMULATION_ONLY),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Transcript":
        params = SessionParams.from_dict(data["params"])
        nonce = None
        if data["nonce_hex"] is not None:
            nonce = Nonce(int(data["nonce_hex"], 16), params.nonce_len)
        return cls(
            params=params,
            nonce=nonce,
            hash_seed=data["hash_seed"],
            events=[QubitEvent.from_dict(e) for e in data["events"]],
            outcome=Outcome(data["outcome"]) if data["outcome"] else None,
            classical_messages=data["classical_messages"],
            aborted=data.get("aborted"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Transcript":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Transcript):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def challenge_message(sender: str, r: Nonce, H: HashFunction) -> dict:
    kind = "CHALLENGE" if sender == "bob" else "NONCE_HASH_FROM_ALICE"
    return {"type": kind, "from": sender, "nonce_hex": r.hex, **H.describe()}


def party_streams(rng: Rng) -> tuple[Rng, Rng, Rng]:
    """Per-party streams of one session: Alice, Bob, Eve."""
    return rng.spawn("alice"), rng.spawn("bob"), rng.spawn("eve")


def run_session(
    alice_key: Key,
    bob_key: Key,
    params: SessionParams,
    adversary: Optional[AdversaryStrategy] = None,
    rng: Optional[Rng] = None,
    record: bool = True,
) -> Transcript:
    """Run one complete session in-process and return its transcript.

    ``rng`` is the session's root stream; Alice, Bob and the adversary each
    draw from their own child stream so the same session can be replayed
    across processes.  ``record=False`` skips per-qubit events and message
    logging (for bulk Monte Carlo); randomness and outcome are unchanged.
    """
    if alice_key.length != params.key_len or bob_key.length != params.key_len:
        raise ValueError("key lengths must equal params.key_len")
    if rng is None:
        rng = Rng(0)
    a_rng, b_rng, e_rng = party_streams(rng)
    tr = Transcript(params)
    msgs = tr.classical_messages

    if params.variant is Variant.ALICE_NONCE:
        r, H = make_challenge(params, a_rng)
        sender = "alice"
    else:
        r, H = bob_challenge(params, b_rng)
        sender = "bob"
    tr.nonce, tr.hash_seed = r, H.seed
    if record:
        msgs.append(challenge_message(sender, r, H))
    if adversary is not None:
        adversary.begin_session(r, H, params)

    if params.variant is Variant.HONG_DECOY:
        _run_hong(alice_key, bob_key, r, H, params, adversary, a_rng, b_rng, e_rng, tr, record)
    else:
        delivered = alice_respond(alice_key, r, H)
        if record:
            for i, q in enumerate(delivered):
                tr.events.append(QubitEvent(i, i, None, q.peek(), None, None, None))
        if adversary is not None:
            for i, q in enumerate(delivered):
                delivered[i], action = adversary.intercept(q, i, e_rng)
                if record:
                    tr.events[i].adversary = action
        records, tr.outcome = bob_measure(bob_key, r, H, delivered, b_rng, params.short_circuit)
        if record:
            for ev, (basis, s) in zip(tr.events, records):
                ev.bob_basis, ev.bob_outcome = basis, s

    if adversary is not None:
        adversary.end_session()
    if record:
        msgs.append({"type": "RESULT", "from": "bob", "outcome": tr.outcome.value})
    return tr


class HongVerifier:
    """Bob's side of the decoy variant.

    Each received qubit is held until Alice announces its mode; then an
    authentication qubit is measured in the basis of the next pending pair
    of ``h_b`` and a decoy in a uniformly random basis (and discarded).
    """

    def __init__(self, k_b: Key, r: Nonce, H: HashFunction, rng: Rng, short_circuit: bool = False):
        self.h_b = session_hash(H, r, k_b)
        self.d = H.d
        self.rng = rng
        self.short_circuit = short_circuit
        self.pending: Optional[Qubit] = None
        self.n_auth = 0
        self.failed = False

    def receive(self, qubit: Qubit) -> None:
        if self.pending is not None:
            raise ProtocolError("previous qubit's mode was never announced")
        self.pending = qubit

    def on_announce(self, mode: str) -> tuple[int, Optional[int], Optional[int]]:
        """Returns (basis, outcome, auth index or None)."""
        if self.pending is None:
            raise ProtocolError("mode announced before any qubit arrived")
        q, self.pending = self.pending, None
        if mode == DECOY:
            basis = self.rng.bit()
            s, _ = measure(q, basis, self.rng)
            return basis, s, None
        if self.n_auth >= self.d:
            raise ProtocolError("more authentication qubits than pairs")
        i = self.n_auth
        self.n_auth += 1
        shift = 2 * (self.d - 1 - i)
        basis = (self.h_b >> (shift + 1)) & 1
        if self.failed and self.short_circuit:
            return basis, None, i
        s, _ = measure(q, basis, self.rng)
        if s != (self.h_b >> shift) & 1:
            self.failed = True
        return basis, s, i

    @property
    def done(self) -> bool:
        return self.n_auth >= self.d

    def outcome(self) -> Outcome:
        if not self.done:
            raise ProtocolError("session incomplete")
        return Outcome.REJECT if self.failed else Outcome.ACCEPT


def _run_hong(alice_key, bob_key, r, H, params, adversary, a_rng, b_rng, e_rng, tr, record) -> None:
    bob = HongVerifier(bob_key, r, H, b_rng, params.short_circuit)
    for tx in hong_mode_flow(alice_key, r, H, params, a_rng):
        q = tx.qubit
        prepared = q.peek() if record else None
        action = None
        if adversary is not None:
            q, action = adversary.intercept(q, tx.position, e_rng)
        bob.receive(q)
        # announcement goes out only after Bob holds the qubit
        if adversary is not None:
            adversary.announce(tx.position, tx.mode)
        basis, s, idx = bob.on_announce(tx.mode)
        if record:
            tr.classical_messages.append({"type": "MODE_ANNOUNCE", "from": "alice",
                                          "position": tx.position, "mode": tx.mode})
            tr.events.append(QubitEvent(tx.position, idx, tx.mode, prepared, action, basis, s))
    tr.outcome = bob.outcome()
