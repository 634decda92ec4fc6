"""The four conjugate-coding states and projective measurement on them.

A qubit is stored as the exact pair (basis, value).  Every state that can
arise in the protocols simulated here is one of |0>, |1>, |+>, |->, so the
pair representation reproduces the measurement statistics exactly.
"""

from __future__ import annotations

from enum import IntEnum

from .rng import Rng


class Basis(IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1


RECT = Basis.RECTILINEAR
DIAG = Basis.DIAGONAL

_LABELS = {(0, 0): "|0>", (0, 1): "|1>", (1, 0): "|+>", (1, 1): "|->"}


class ConsumedQubitError(RuntimeError):
    """A qubit record was used after it had already been measured or sent."""


class Qubit:
    """One BB84 state with a consume-once contract.

    ``consumed`` stands in for no-cloning: once a qubit has been measured
    (or handed to a transport) the record can no longer be read.
    """

    __slots__ = ("_basis", "_value", "consumed")

    def __init__(self, basis: int, value: int) -> None:
        if basis not in (0, 1) or value not in (0, 1):
            raise ValueError(f"invalid qubit ({basis}, {value})")
        self._basis = basis
        self._value = value
        self.consumed = False

    @classmethod
    def _fresh(cls, basis: int, value: int) -> "Qubit":
        q = cls.__new__(cls)
        q._basis = basis
        q._value = value
        q.consumed = False
        return q

    def _check(self) -> None:
        if self.consumed:
            raise ConsumedQubitError("qubit has already been consumed")

    @property
    def basis(self) -> Basis:
        self._check()
        return Basis(self._basis)

    @property
    def value(self) -> int:
        self._check()
        return self._value

    def take(self) -> tuple[int, int]:
        """Consume the record and return its (basis, value) pair.

        Reserved for transports and for simulation ground truth; protocol
        parties learn about a qubit only through :func:`measure`.
        """
        self._check()
        self.consumed = True
        return self._basis, self._value

    def peek(self) -> tuple[int, int]:
        """Ground-truth (basis, value) without consuming (simulation only)."""
        self._check()
        return self._basis, self._value

    def __repr__(self) -> str:
        state = _LABELS[(self._basis, self._value)]
        return f"Qubit({state}{', consumed' if self.consumed else ''})"


def embed(b1: int, b2: int) -> Qubit:
    """Map two bits to a state: the first picks the basis, the second the value."""
    return Qubit(b1, b2)


def measure(q: Qubit, meas_basis: int, rng: Rng) -> tuple[int, Qubit]:
    """Measure ``q`` in ``meas_basis``.

    Returns ``(outcome, post_state)``.  ``q`` is consumed; ``post_state`` is
    a fresh record of the collapsed state.  A same-basis measurement is
    deterministic and draws nothing from ``rng``.
    """
    meas_basis = int(meas_basis)
    if meas_basis not in (0, 1):
        raise ValueError(f"measurement basis must be 0 or 1, got {meas_basis}")
    if q.consumed:
        raise ConsumedQubitError("qubit has already been consumed")
    q.consumed = True
    if q._basis == meas_basis:
        outcome = q._value
    else:
        outcome = rng.bit()
    return outcome, Qubit._fresh(meas_basis, outcome)


def random_qubit(rng: Rng) -> Qubit:
    """One of the four states, uniformly."""
    pair = rng.bits(2)
    return Qubit._fresh(pair >> 1, pair & 1)
