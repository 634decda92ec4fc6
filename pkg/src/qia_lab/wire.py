"""Framed binary transport so Alice, Bob and Eve can run as separate processes.

Frame layout (all integers little-endian)::

    length   u32   1 + len(payload)
    msg_type u8    0x01 CHALLENGE, 0x02 QUBITS, 0x03 MODE_ANNOUNCE,
                   0x04 RESULT, 0x05 NONCE_HASH_FROM_ALICE
    payload  bytes

Payloads:

* CHALLENGE / NONCE_HASH_FROM_ALICE: ``nonce_len u16 | nonce (ceil(nonce_len/8)
  bytes, big-endian) | hash_seed u64 | in_len u32 | d u32``
* QUBITS: ``count u16`` then ``count x (token_id u32 | state u8)`` with
  ``state = basis << 1 | value``
* MODE_ANNOUNCE: ``token_id u32 | mode u8`` (0 auth, 1 decoy, 0xFF = Bob's
  receipt for that token, which Alice waits for before announcing)
* RESULT: ``outcome u8`` (1 accept, 0 reject)

The quantum channel shares the byte stream; its physics contract is kept
by consuming each qubit record when it is serialised and by honest
endpoints refusing a token id they have already seen in the session.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .hashfam import HashFunction, Nonce
from .protocol import (
    AUTH,
    DECOY,
    HongVerifier,
    Key,
    Outcome,
    ProtocolError,
    QubitEvent,
    SessionParams,
    Transcript,
    Variant,
    alice_respond,
    bob_challenge,
    bob_measure,
    challenge_message,
    hong_mode_flow,
    make_challenge,
    party_streams,
)
from .qstate import Qubit
from .rng import Rng

log = logging.getLogger(__name__)

CHALLENGE = 0x01
QUBITS = 0x02
MODE_ANNOUNCE = 0x03
RESULT = 0x04
NONCE_HASH_FROM_ALICE = 0x05
MSG_TYPES = {CHALLENGE, QUBITS, MODE_ANNOUNCE, RESULT, NONCE_HASH_FROM_ALICE}

MODE_AUTH = 0
MODE_DECOY = 1
MODE_RECEIVED = 0xFF
_MODE_NAMES = {MODE_AUTH: AUTH, MODE_DECOY: DECOY}
_MODE_CODES = {AUTH: MODE_AUTH, DECOY: MODE_DECOY}

_LEN = struct.Struct("<I")
_CHALLENGE_TAIL = struct.Struct("<QII")
_TOKEN = struct.Struct("<IB")
MAX_FRAME = 1 << 24


class FramingError(ValueError):
    """Bytes that do not form a valid frame."""


class ReplayError(RuntimeError):
    """An honest endpoint saw the same qubit token twice."""


class ConnectionLost(ConnectionError):
    pass


@dataclass(frozen=True)
class Challenge:
    nonce: Nonce
    hash_seed: int
    in_len: int
    d: int
    msg_type = CHALLENGE

    def hash(self) -> HashFunction:
        return HashFunction(self.hash_seed, self.in_len, self.d)


@dataclass(frozen=True)
class NonceHashFromAlice(Challenge):
    msg_type = NONCE_HASH_FROM_ALICE


@dataclass(frozen=True)
class QubitToken:
    token_id: int
    basis: int
    value: int

    @classmethod
    def wrap(cls, token_id: int, q: Qubit) -> "QubitToken":
        """Serialise a qubit for sending; the local record is consumed."""
        basis, value = q.take()
        return cls(token_id, basis, value)

    def unwrap(self) -> Qubit:
        return Qubit(self.basis, self.value)


@dataclass(frozen=True)
class Qubits:
    tokens: tuple[QubitToken, ...]
    msg_type = QUBITS


@dataclass(frozen=True)
class ModeAnnounce:
    token_id: int
    mode: int
    msg_type = MODE_ANNOUNCE


@dataclass(frozen=True)
class Result:
    outcome: Outcome
    msg_type = RESULT


Message = Union[Challenge, NonceHashFromAlice, Qubits, ModeAnnounce, Result]


def encode_raw(msg_type: int, payload: bytes) -> bytes:
    if not 0 <= msg_type <= 0xFF:
        raise FramingError("msg_type must fit in one byte")
    return _LEN.pack(1 + len(payload)) + bytes([msg_type]) + payload


def decode_raw(data: bytes) -> tuple[int, bytes]:
    if len(data) < 5:
        raise FramingError("truncated frame header")
    (length,) = _LEN.unpack_from(data)
    if length < 1:
        raise FramingError("frame length must cover the type byte")
    if len(data) != 4 + length:
        raise FramingError(f"frame declares {length} bytes after the length, has {len(data) - 4}")
    return data[4], bytes(data[5:])


def _encode_payload(msg: Message) -> bytes:
    if isinstance(msg, Challenge):
        n = msg.nonce.length
        if n > 0xFFFF:
            raise FramingError("nonce too long for the wire format")
        return (
            struct.pack("<H", n)
            + msg.nonce.value.to_bytes((n + 7) // 8, "big")
            + _CHALLENGE_TAIL.pack(msg.hash_seed, msg.in_len, msg.d)
        )
    if isinstance(msg, Qubits):
        if len(msg.tokens) > 0xFFFF:
            raise FramingError("too many qubits in one frame")
        body = [struct.pack("<H", len(msg.tokens))]
        body += [_TOKEN.pack(t.token_id, (t.basis << 1) | t.value) for t in msg.tokens]
        return b"".join(body)
    if isinstance(msg, ModeAnnounce):
        return _TOKEN.pack(msg.token_id, msg.mode)
    if isinstance(msg, Result):
        return bytes([1 if Outcome(msg.outcome) is Outcome.ACCEPT else 0])
    raise TypeError(f"not a wire message: {msg!r}")


def encode_frame(msg: Message) -> bytes:
    return encode_raw(msg.msg_type, _encode_payload(msg))


def _decode_challenge(cls, payload: bytes):
    if len(payload) < 2:
        raise FramingError("truncated challenge")
    (n,) = struct.unpack_from("<H", payload)
    nbytes = (n + 7) // 8
    if n < 1 or len(payload) != 2 + nbytes + _CHALLENGE_TAIL.size:
        raise FramingError("challenge payload has the wrong length")
    value = int.from_bytes(payload[2:2 + nbytes], "big")
    if value >> n:
        raise FramingError("nonce value exceeds its declared length")
    seed, in_len, d = _CHALLENGE_TAIL.unpack_from(payload, 2 + nbytes)
    return cls(Nonce(value, n), seed, in_len, d)


def decode_frame(data: bytes) -> Message:
    msg_type, payload = decode_raw(data)
    if msg_type not in MSG_TYPES:
        raise FramingError(f"unknown msg_type 0x{msg_type:02x}")
    if msg_type == CHALLENGE:
        return _decode_challenge(Challenge, payload)
    if msg_type == NONCE_HASH_FROM_ALICE:
        return _decode_challenge(NonceHashFromAlice, payload)
    if msg_type == QUBITS:
        if len(payload) < 2:
            raise FramingError("truncated qubit frame")
        (count,) = struct.unpack_from("<H", payload)
        if len(payload) != 2 + count * _TOKEN.size:
            raise FramingError("qubit frame has the wrong length")
        tokens = []
        for k in range(count):
            tid, state = _TOKEN.unpack_from(payload, 2 + k * _TOKEN.size)
            if state > 3:
                raise FramingError(f"invalid qubit state byte {state}")
            tokens.append(QubitToken(tid, state >> 1, state & 1))
        return Qubits(tuple(tokens))
    if msg_type == MODE_ANNOUNCE:
        if len(payload) != _TOKEN.size:
            raise FramingError("mode announcement has the wrong length")
        tid, mode = _TOKEN.unpack(payload)
        if mode not in (MODE_AUTH, MODE_DECOY, MODE_RECEIVED):
            raise FramingError(f"invalid mode byte {mode}")
        return ModeAnnounce(tid, mode)
    if len(payload) != 1 or payload[0] > 1:
        raise FramingError("invalid result payload")
    return Result(Outcome.ACCEPT if payload[0] else Outcome.REJECT)


# -- transports ---------------------------------------------------------------


class SocketTransport:
    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock

    def send_bytes(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc

    def recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc
            if not chunk:
                raise ConnectionLost("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class _Pipe:
    def __init__(self) -> None:
        self.buf = bytearray()
        self.closed = False
        self.cond = threading.Condition()


class MemoryTransport:
    """One end of an in-process byte duplex."""

    def __init__(self, inbound: _Pipe, outbound: _Pipe) -> None:
        self._in = inbound
        self._out = outbound

    @staticmethod
    def pair() -> tuple["MemoryTransport", "MemoryTransport"]:
        a, b = _Pipe(), _Pipe()
        return MemoryTransport(a, b), MemoryTransport(b, a)

    def send_bytes(self, data: bytes) -> None:
        with self._out.cond:
            if self._out.closed:
                raise ConnectionLost("pipe closed")
            self._out.buf += data
            self._out.cond.notify_all()

    def recv_exact(self, n: int) -> bytes:
        with self._in.cond:
            while len(self._in.buf) < n:
                if self._in.closed:
                    raise ConnectionLost("peer closed the pipe")
                self._in.cond.wait()
            out = bytes(self._in.buf[:n])
            del self._in.buf[:n]
            return out

    def close(self) -> None:
        for pipe in (self._in, self._out):
            with pipe.cond:
                pipe.closed = True
                pipe.cond.notify_all()


class Channel:
    """Message-level view of a transport; optionally logs every raw frame."""

    def __init__(self, transport, frame_log: Optional[list] = None) -> None:
        self.transport = transport
        self.frame_log = frame_log

    def send(self, msg: Message) -> None:
        self.send_raw(encode_frame(msg))

    def send_raw(self, frame: bytes) -> None:
        if self.frame_log is not None:
            self.frame_log.append(("out", frame))
        self.transport.send_bytes(frame)

    def recv_raw(self) -> bytes:
        head = self.transport.recv_exact(4)
        (length,) = _LEN.unpack(head)
        if not 1 <= length <= MAX_FRAME:
            raise FramingError(f"implausible frame length {length}")
        frame = head + self.transport.recv_exact(length)
        if self.frame_log is not None:
            self.frame_log.append(("in", frame))
        return frame

    def recv(self) -> Message:
        return decode_frame(self.recv_raw())

    def expect(self, *kinds: type) -> Message:
        msg = self.recv()
        if type(msg) not in kinds:
            raise ProtocolError(f"expected {[k.__name__ for k in kinds]}, got {type(msg).__name__}")
        return msg

    def close(self) -> None:
        self.transport.close()


class TokenGuard:
    """Accepts each qubit token id at most once per session."""

    def __init__(self) -> None:
        self.seen: set[int] = set()

    def admit(self, token: QubitToken) -> Qubit:
        if token.token_id in self.seen:
            raise ReplayError(f"qubit token {token.token_id} received twice")
        self.seen.add(token.token_id)
        return token.unwrap()


# -- parties ------------------------------------------------------------------


def session_rng(seed: int, session_index: int) -> Rng:
    return Rng(seed).spawn("session", session_index)


def _check_challenge(msg: Challenge, params: SessionParams) -> HashFunction:
    if msg.nonce.length != params.nonce_len or msg.in_len != params.hash_in_len or msg.d != params.d:
        raise ProtocolError("challenge does not match the configured session parameters")
    return msg.hash()


def alice_session(chan: Channel, key: Key, params: SessionParams, rng: Rng) -> Transcript:
    """Prover side of one session; returns Alice's transcript fragment."""
    a_rng, _, _ = party_streams(rng)
    tr = Transcript(params)
    if params.variant is Variant.ALICE_NONCE:
        r, H = make_challenge(params, a_rng)
        chan.send(NonceHashFromAlice(r, H.seed, H.in_len, H.d))
        tr.classical_messages.append(challenge_message("alice", r, H))
    else:
        msg = chan.expect(Challenge)
        H = _check_challenge(msg, params)
        r = msg.nonce
        tr.classical_messages.append(challenge_message("bob", r, H))
    tr.nonce, tr.hash_seed = r, H.seed

    if params.variant is Variant.HONG_DECOY:
        for tx in hong_mode_flow(key, r, H, params, a_rng):
            tr.events.append(QubitEvent(tx.position, tx.index, tx.mode, tx.qubit.peek(), None, None, None))
            chan.send(Qubits((QubitToken.wrap(tx.position, tx.qubit),)))
            ack = chan.expect(ModeAnnounce)
            if ack.token_id != tx.position or ack.mode != MODE_RECEIVED:
                raise ProtocolError("expected a receipt for the qubit just sent")
            chan.send(ModeAnnounce(tx.position, _MODE_CODES[tx.mode]))
            tr.classical_messages.append({"type": "MODE_ANNOUNCE", "from": "alice",
                                          "position": tx.position, "mode": tx.mode})
    else:
        qubits = alice_respond(key, r, H)
        for i, q in enumerate(qubits):
            tr.events.append(QubitEvent(i, i, None, q.peek(), None, None, None))
        chan.send(Qubits(tuple(QubitToken.wrap(i, q) for i, q in enumerate(qubits))))

    res = chan.expect(Result)
    tr.outcome = Outcome(res.outcome)
    tr.classical_messages.append({"type": "RESULT", "from": "bob", "outcome": tr.outcome.value})
    return tr


def bob_session(chan: Channel, key: Key, params: SessionParams, rng: Rng) -> Transcript:
    """Verifier side of one session; returns Bob's transcript fragment."""
    _, b_rng, _ = party_streams(rng)
    tr = Transcript(params)
    guard = TokenGuard()
    if params.variant is Variant.ALICE_NONCE:
        msg = chan.expect(NonceHashFromAlice)
        H = _check_challenge(msg, params)
        r = msg.nonce
        tr.classical_messages.append(challenge_message("alice", r, H))
    else:
        r, H = bob_challenge(params, b_rng)
        chan.send(Challenge(r, H.seed, H.in_len, H.d))
        tr.classical_messages.append(challenge_message("bob", r, H))
    tr.nonce, tr.hash_seed = r, H.seed

    if params.variant is Variant.HONG_DECOY:
        bob = HongVerifier(key, r, H, b_rng, params.short_circuit)
        position = 0
        while not bob.done:
            frame = chan.expect(Qubits)
            if len(frame.tokens) != 1:
                raise ProtocolError("decoy variant sends one qubit per frame")
            token = frame.tokens[0]
            bob.receive(guard.admit(token))
            chan.send(ModeAnnounce(token.token_id, MODE_RECEIVED))
            ann = chan.expect(ModeAnnounce)
            if ann.token_id != token.token_id or ann.mode == MODE_RECEIVED:
                raise ProtocolError("mode announcement does not match the received qubit")
            mode = _MODE_NAMES[ann.mode]
            tr.classical_messages.append({"type": "MODE_ANNOUNCE", "from": "alice",
                                          "position": position, "mode": mode})
            basis, s, idx = bob.on_announce(mode)
            tr.events.append(QubitEvent(position, idx, mode, None, None, basis, s))
            position += 1
        tr.outcome = bob.outcome()
    else:
        frame = chan.expect(Qubits)
        qubits = [guard.admit(t) for t in frame.tokens]
        records, tr.outcome = bob_measure(key, r, H, qubits, b_rng, params.short_circuit)
        for i, (basis, s) in enumerate(records):
            tr.events.append(QubitEvent(i, i, None, None, None, basis, s))

    chan.send(Result(tr.outcome))
    tr.classical_messages.append({"type": "RESULT", "from": "bob", "outcome": tr.outcome.value})
    return tr


@dataclass
class ProxyFragment:
    actions: dict[int, Optional[dict]] = field(default_factory=dict)
    frames_relayed: int = 0
    aborted: Optional[str] = None


def proxy_session(
    upstream: Channel,
    downstream: Channel,
    strategy,
    params: SessionParams,
    rng: Rng,
) -> ProxyFragment:
    """Sit between Alice (``upstream``) and Bob (``downstream``) for one session.

    Classical frames are relayed byte-for-byte.  QUBITS frames travelling
    towards Bob go through ``strategy.intercept``; mode announcements are
    shown to the strategy after they have been forwarded.
    """
    _, _, e_rng = party_streams(rng)
    frag = ProxyFragment()
    done = threading.Event()
    finishing = threading.Event()
    errors: list[BaseException] = []
    position = [0]

    def fail(exc: BaseException) -> None:
        errors.append(exc)
        done.set()
        # unblock whichever side is still waiting
        upstream.close()
        downstream.close()

    def bob_to_alice() -> None:
        try:
            while True:
                raw = downstream.recv_raw()
                msg = decode_frame(raw)
                if isinstance(msg, Challenge) and not isinstance(msg, NonceHashFromAlice):
                    strategy.begin_session(msg.nonce, msg.hash(), params)
                if isinstance(msg, Result):
                    # Alice may hang up as soon as this arrives
                    finishing.set()
                upstream.send_raw(raw)
                frag.frames_relayed += 1
                if finishing.is_set():
                    done.set()
                    return
        except Exception as exc:
            if not done.is_set():
                fail(exc)

    def alice_to_bob() -> None:
        try:
            while not done.is_set():
                try:
                    raw = upstream.recv_raw()
                except ConnectionLost:
                    if finishing.is_set():
                        return
                    raise
                msg = decode_frame(raw)
                if isinstance(msg, NonceHashFromAlice):
                    strategy.begin_session(msg.nonce, msg.hash(), params)
                elif isinstance(msg, Qubits):
                    out = []
                    for token in msg.tokens:
                        q, action = strategy.intercept(token.unwrap(), position[0], e_rng)
                        frag.actions[position[0]] = action
                        position[0] += 1
                        out.append(QubitToken.wrap(token.token_id, q))
                    raw = encode_frame(Qubits(tuple(out)))
                downstream.send_raw(raw)
                frag.frames_relayed += 1
                if isinstance(msg, ModeAnnounce) and msg.mode != MODE_RECEIVED:
                    strategy.announce(msg.token_id, _MODE_NAMES[msg.mode])
        except Exception as exc:
            if not done.is_set():
                fail(exc)

    t_up = threading.Thread(target=alice_to_bob, daemon=True)
    t_up.start()
    bob_to_alice()
    # Alice sends nothing after Bob's result, so her direction just drains.
    t_up.join(timeout=0.05)
    if errors:
        frag.aborted = f"{type(errors[0]).__name__}: {errors[0]}"
        log.warning("proxy session aborted: %s", frag.aborted)
    strategy.end_session()
    return frag


def merge_fragments(
    alice: Optional[Transcript], bob: Transcript, eve: Optional[ProxyFragment] = None
) -> Transcript:
    """Combine per-party fragments into the transcript an in-process run produces."""
    tr = Transcript(bob.params, bob.nonce, bob.hash_seed, [], bob.outcome,
                    list(bob.classical_messages), bob.aborted)
    prepared = {e.position: e.prepared for e in alice.events} if alice else {}
    for ev in bob.events:
        action = eve.actions.get(ev.position) if eve else None
        tr.events.append(QubitEvent(ev.position, ev.index, ev.mode, prepared.get(ev.position),
                                    action, ev.bob_basis, ev.bob_outcome))
    if eve is not None and eve.aborted and tr.aborted is None:
        tr.aborted = eve.aborted
    return tr


# -- TCP helpers --------------------------------------------------------------


def listen(host: str, port: int) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen()
    return srv


def connect(host: str, port: int, timeout: float = 10.0) -> Channel:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return Channel(SocketTransport(sock))


def accept(srv: socket.socket, timeout: float = 10.0) -> Channel:
    srv.settimeout(timeout)
    sock, _ = srv.accept()
    sock.settimeout(timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return Channel(SocketTransport(sock))


def serve_alice(srv: socket.socket, key: Key, params: SessionParams, seed: int,
                sessions: int, on_session: Optional[Callable[[int, Transcript], None]] = None) -> list[Transcript]:
    out = []
    for i in range(sessions):
        chan = accept(srv)
        try:
            tr = alice_session(chan, key, params, session_rng(seed, i))
        finally:
            chan.close()
        out.append(tr)
        if on_session:
            on_session(i, tr)
    return out


def run_bob(host: str, port: int, key: Key, params: SessionParams, seed: int,
            sessions: int, on_session: Optional[Callable[[int, Transcript], None]] = None) -> list[Transcript]:
    out = []
    for i in range(sessions):
        chan = connect(host, port)
        try:
            tr = bob_session(chan, key, params, session_rng(seed, i))
        finally:
            chan.close()
        out.append(tr)
        if on_session:
            on_session(i, tr)
    return out


def serve_proxy(srv: socket.socket, upstream_host: str, upstream_port: int, strategy,
                params: SessionParams, seed: int, sessions: int,
                on_session: Optional[Callable[[int, ProxyFragment], None]] = None) -> list[ProxyFragment]:
    out = []
    for i in range(sessions):
        down = accept(srv)
        up = connect(upstream_host, upstream_port)
        try:
            frag = proxy_session(up, down, strategy, params, session_rng(seed, i))
        finally:
            up.close()
            down.close()
        out.append(frag)
        if on_session:
            on_session(i, frag)
    return out

