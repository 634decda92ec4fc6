"""Eavesdropper strategies and the key-space reduction attack.

A measurement of a BB84 state in basis b' with outcome v' rules out exactly
one preparation: (b', 1 - v').  Since every candidate key determines the
(basis, value) pair of every qubit through the public ``H(r || k)``, each
observation removes the candidates whose pair is that impossible one.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .hashfam import HashFunction, Nonce, hash_all_keys, hash_key_range
from .keyspace import KeySpace, KeySpaceError, SurvivorSet
from .protocol import (
    AUTH,
    Key,
    Outcome,
    SessionParams,
    Variant,
    alice_respond,
    bob_verify,
    make_challenge,
)
from .qstate import Qubit, measure
from .rng import Rng

LOG_HALF = -math.log(2.0)


class PolicyKind(str, Enum):
    ALL_RECTILINEAR = "AllRectilinear"
    ALL_DIAGONAL = "AllDiagonal"
    UNIFORM = "UniformRandomPerQubit"
    FIXED = "FixedPattern"


@dataclass(frozen=True)
class BasisPolicy:
    kind: PolicyKind = PolicyKind.ALL_RECTILINEAR
    pattern: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.FIXED and not self.pattern:
            raise ValueError("FixedPattern needs a non-empty pattern")

    @classmethod
    def parse(cls, text: str) -> "BasisPolicy":
        """``AllRectilinear``, ``AllDiagonal``, ``UniformRandomPerQubit`` or ``FixedPattern:0110``."""
        if text.startswith("FixedPattern:"):
            return cls(PolicyKind.FIXED, tuple(int(c) for c in text.split(":", 1)[1]))
        return cls(PolicyKind(text))

    def __str__(self) -> str:
        if self.kind is PolicyKind.FIXED:
            return "FixedPattern:" + "".join(map(str, self.pattern))
        return self.kind.value

    def check_length(self, d: int) -> None:
        if self.kind is PolicyKind.FIXED and len(self.pattern) != d:
            raise ValueError(f"FixedPattern has {len(self.pattern)} entries, session has d={d}")

    def basis_for(self, position: int, rng: Rng) -> int:
        if self.kind is PolicyKind.ALL_RECTILINEAR:
            return 0
        if self.kind is PolicyKind.ALL_DIAGONAL:
            return 1
        if self.kind is PolicyKind.UNIFORM:
            return rng.bit()
        # decoy transmissions can push positions past d; the pattern cycles
        return self.pattern[position % len(self.pattern)]


ALL_RECT = BasisPolicy(PolicyKind.ALL_RECTILINEAR)
ALL_DIAG = BasisPolicy(PolicyKind.ALL_DIAGONAL)
UNIFORM = BasisPolicy(PolicyKind.UNIFORM)


@dataclass(frozen=True)
class Observation:
    qubit_index: int
    meas_basis: int
    outcome: int
    session_id: int = 0


@dataclass
class SessionCapture:
    """Everything Eve keeps from one session: public values and her observations."""

    nonce: Nonce
    hash: HashFunction
    observations: list[Observation] = field(default_factory=list)
    session_id: int = 0
    discarded_decoys: int = 0


def intercept_measure(
    qubits: Sequence[Qubit], policy: BasisPolicy, rng: Rng, session_id: int = 0
) -> tuple[list[Observation], list[Qubit]]:
    """Measure every qubit per ``policy`` and forward the collapsed states."""
    obs, forwarded = [], []
    for i, q in enumerate(qubits):
        basis = policy.basis_for(i, rng)
        outcome, post = measure(q, basis, rng)
        obs.append(Observation(i, basis, outcome, session_id))
        forwarded.append(post)
    return obs, forwarded


class InterceptResend:
    """Measure-and-forward on the quantum channel, logging observations.

    In the decoy variant observations are buffered per transmission and
    kept only once Alice announces authentication mode.
    """

    def __init__(self, policy: BasisPolicy = ALL_RECT) -> None:
        self.policy = policy
        self.captures: list[SessionCapture] = []
        self._current: Optional[SessionCapture] = None
        self._pending: dict[int, tuple[int, int]] = {}
        self._buffer = False

    def begin_session(self, r: Nonce, H: HashFunction, params: SessionParams) -> None:
        if params.variant is not Variant.HONG_DECOY:
            self.policy.check_length(H.d)
        self._current = SessionCapture(r, H, session_id=len(self.captures))
        self._pending = {}
        self._buffer = params.variant is Variant.HONG_DECOY

    def intercept(self, qubit: Qubit, position: int, rng: Rng) -> tuple[Qubit, dict]:
        basis = self.policy.basis_for(position, rng)
        outcome, post = measure(qubit, basis, rng)
        cur = self._current
        if self._buffer:
            self._pending[position] = (basis, outcome)
        else:
            cur.observations.append(Observation(position, basis, outcome, cur.session_id))
        return post, {"action": "measure", "basis": basis, "outcome": outcome}

    def announce(self, position: int, mode: str) -> None:
        basis, outcome = self._pending.pop(position)
        cur = self._current
        if mode == AUTH:
            cur.observations.append(
                Observation(len(cur.observations), basis, outcome, cur.session_id)
            )
        else:
            cur.discarded_decoys += 1

    def end_session(self) -> None:
        if self._current is not None:
            self.captures.append(self._current)
        self._current = None


class TransparentRelay:
    """Forwards every qubit untouched."""

    def begin_session(self, r, H, params) -> None:
        pass

    def intercept(self, qubit: Qubit, position: int, rng: Rng) -> tuple[Qubit, None]:
        return qubit, None

    def announce(self, position: int, mode: str) -> None:
        pass

    def end_session(self) -> None:
        pass


class StoreAndForward(TransparentRelay):
    """Holds each qubit in (unbounded) quantum memory and then relays it unmeasured."""

    def __init__(self) -> None:
        self.held = 0

    def intercept(self, qubit: Qubit, position: int, rng: Rng) -> tuple[Qubit, dict]:
        self.held += 1
        return qubit, {"action": "store"}


def _observed_pairs(hashes: np.ndarray, d: int, i: int) -> tuple[np.ndarray, np.ndarray]:
    shift = np.uint64(2 * (d - 1 - i))
    one = np.uint64(1)
    basis = (hashes >> (shift + one)) & one
    value = (hashes >> shift) & one
    return basis, value


def _candidate_hashes(keyspace: KeySpace, H: HashFunction, r: Nonce) -> np.ndarray:
    if r.length + keyspace.key_len != H.in_len:
        raise KeySpaceError("key space does not match the session's hash input length")
    if keyspace.is_exhaustive:
        keyspace._check_cap()
        return hash_key_range(H, r, keyspace.key_len)
    return hash_all_keys(H, r, keyspace.as_array(), keyspace.key_len)


def _check_obs(obs: Iterable[Observation], d: int) -> None:
    for o in obs:
        if not 0 <= o.qubit_index < d:
            raise IndexError(f"observation index {o.qubit_index} outside 0..{d - 1}")


def elimination_mask(keyspace: KeySpace, H: HashFunction, r: Nonce,
                     obs: Sequence[Observation]) -> np.ndarray:
    """Boolean mask (aligned with the key space) of candidates that survive."""
    _check_obs(obs, H.d)
    hashes = _candidate_hashes(keyspace, H, r)
    dead = np.zeros(hashes.shape, dtype=bool)
    for o in obs:
        basis, value = _observed_pairs(hashes, H.d, o.qubit_index)
        dead |= (basis == np.uint64(o.meas_basis)) & (value == np.uint64(1 - o.outcome))
    return ~dead


def eliminate(keyspace: KeySpace, H: HashFunction, r: Nonce,
              obs: Sequence[Observation]) -> SurvivorSet:
    """Drop every candidate whose hash puts an impossible pair under some observation."""
    return SurvivorSet.from_mask(keyspace, elimination_mask(keyspace, H, r, obs))


def eliminate_capture(keyspace: KeySpace, cap: SessionCapture) -> SurvivorSet:
    return eliminate(keyspace, cap.hash, cap.nonce, cap.observations)


def intersect_sessions(subsets: Sequence[SurvivorSet]) -> SurvivorSet:
    if not subsets:
        raise ValueError("nothing to intersect")
    out = subsets[0]
    for s in subsets[1:]:
        out = out & s
    return out


def likelihood_score(
    keyspace: KeySpace,
    sessions: Sequence[tuple[HashFunction, Nonce, Sequence[Observation]]],
) -> np.ndarray:
    """Natural-log likelihood of all observations for each candidate.

    Per observation the candidate's pair (b, v) contributes log 1 if
    b equals the measured basis and v the outcome, log 0 (-inf) if b matches
    but v does not, and log 1/2 when the bases differ.  The result is
    aligned with ``keyspace.enumerate()``.
    """
    scores = np.zeros(len(keyspace), dtype=np.float64)
    for H, r, obs in sessions:
        _check_obs(obs, H.d)
        hashes = _candidate_hashes(keyspace, H, r)
        for o in obs:
            basis, value = _observed_pairs(hashes, H.d, o.qubit_index)
            same = basis == np.uint64(o.meas_basis)
            scores[~same] += LOG_HALF
            scores[same & (value != np.uint64(o.outcome))] = -np.inf
    return scores


def ranked(keyspace: KeySpace, scores: np.ndarray) -> list[tuple[int, float]]:
    """Candidates sorted by descending score (ties in key order)."""
    keys = keyspace.as_array()
    order = np.argsort(-scores, kind="stable")
    return [(int(keys[i]), float(scores[i])) for i in order]


def top_stratum(keyspace: KeySpace, scores: np.ndarray) -> SurvivorSet:
    """Candidates that explain every observation with probability 1."""
    return SurvivorSet.from_mask(keyspace, scores == 0.0)


def scores_to_csv(keyspace: KeySpace, scores: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["key_hex", "log2_likelihood"])
    width = (keyspace.key_len + 3) // 4
    for key, s in ranked(keyspace, scores):
        writer.writerow([format(key, f"0{width}x"), "-inf" if s == -np.inf else repr(s / math.log(2.0))])
    return buf.getvalue()


@dataclass
class StoredTransmission:
    """Eve's quantum memory: a challenge and the unmeasured qubits answering it."""

    nonce: Nonce
    hash: HashFunction
    qubits: list[Qubit]


def capture_transmission(alice_key: Key, params: SessionParams, rng: Rng) -> StoredTransmission:
    """Eve asks Alice to identify herself and stores the reply without measuring.

    Under the Alice-nonce variant Alice picks ``(r, H)``; otherwise Eve, posing
    as a verifier, sends a challenge of her own.  ``rng`` is Alice's stream in
    the first case and Eve's in the second.
    """
    r, H = make_challenge(params, rng)
    return StoredTransmission(r, H, alice_respond(alice_key, r, H))


def replay_attack(
    variant: Variant,
    stored: StoredTransmission,
    target_verifier_key: Key,
    rng: Rng,
) -> Outcome:
    """Present stored material to an honest verifier.

    A verifier that lets the prover choose the nonce checks the stored
    qubits against the stored ``(r, H)``; one that issues its own challenge
    checks them against a fresh one.
    """
    variant = Variant(variant)
    d = stored.hash.d
    if variant is Variant.ALICE_NONCE:
        r, H = stored.nonce, stored.hash
    else:
        params = SessionParams(
            key_len=target_verifier_key.length, nonce_len=stored.nonce.length, d=d,
            variant=Variant.BOB_NONCE,
        )
        r, H = make_challenge(params, rng)
    return bob_verify(target_verifier_key, r, H, stored.qubits, rng)
