"""Simulation laboratory for hash-based quantum identity authentication and
the key-space reduction attack against it."""

from .adversary import (
    BasisPolicy,
    InterceptResend,
    Observation,
    StoreAndForward,
    TransparentRelay,
    eliminate,
    intercept_measure,
    intersect_sessions,
    likelihood_score,
    replay_attack,
)
from .hashfam import HashFunction, Nonce, sample_hash, sample_nonce
from .keyspace import KeySpace, SurvivorSet, survival_fraction
from .protocol import (
    Key,
    Outcome,
    SessionParams,
    Transcript,
    Variant,
    alice_respond,
    bob_challenge,
    bob_verify,
    hong_mode_flow,
    run_session,
)
from .qstate import Basis, Qubit, embed, measure, random_qubit
from .rng import Rng

__version__ = "0.1.0"
