import pytest

from qia_lab.protocol import Key, SessionParams, Variant
from qia_lab.rng import Rng


@pytest.fixture
def rng():
    return Rng(1234)


def small_params(variant=Variant.BOB_NONCE, key_len=8, d=6, nonce_len=16, **kw):
    return SessionParams(key_len=key_len, nonce_len=nonce_len, d=d, variant=variant, **kw)


def random_key(rng, n):
    return Key.random(rng, n)


def tcp_sessions(alice_key, bob_key, params, strategy, seed, sessions):
    """Alice, a proxy running ``strategy`` and Bob over loopback TCP.

    Returns the merged per-session transcripts.
    """
    import threading

    from qia_lab import wire

    alice_srv = wire.listen("127.0.0.1", 0)
    proxy_srv = wire.listen("127.0.0.1", 0)
    out = {}
    errors = []

    def guard(name, fn):
        def run():
            try:
                out[name] = fn()
            except BaseException as exc:  # surfaced by the caller
                errors.append(exc)
        return threading.Thread(target=run, daemon=True)

    threads = [
        guard("alice", lambda: wire.serve_alice(alice_srv, alice_key, params, seed, sessions)),
        guard("eve", lambda: wire.serve_proxy(proxy_srv, "127.0.0.1", alice_srv.getsockname()[1],
                                              strategy, params, seed, sessions)),
    ]
    for t in threads:
        t.start()
    try:
        bobs = wire.run_bob("127.0.0.1", proxy_srv.getsockname()[1], bob_key, params, seed, sessions)
    finally:
        for t in threads:
            t.join(timeout=30)
        alice_srv.close()
        proxy_srv.close()
    if errors:
        raise errors[0]
    return [wire.merge_fragments(a, b, e) for a, b, e in zip(out["alice"], bobs, out["eve"])]


def born_probability(prep, meas_basis, outcome):
    """P(outcome | prepared BB84 state, measurement basis) from the state vectors."""
    import math

    s = 1 / math.sqrt(2)
    vec = {(0, 0): (1, 0), (0, 1): (0, 1), (1, 0): (s, s), (1, 1): (s, -s)}
    amp = sum(a * b for a, b in zip(vec[(meas_basis, outcome)], vec[prep]))
    return amp * amp


def brute_log_likelihood(key_len, sessions):
    """Log-likelihood of every key by direct hashing and the Born rule."""
    import math

    import numpy as np

    from qia_lab.hashfam import hash_inputs
    from qia_lab.protocol import pair

    out = []
    for k in range(1 << key_len):
        total = 0.0
        for H, r, obs in sessions:
            h = H.eval_int(hash_inputs(r, k, key_len))
            for o in obs:
                p = born_probability(pair(h, H.d, o.qubit_index), o.meas_basis, o.outcome)
                total += math.log(p) if p > 1e-12 else -math.inf
        out.append(total)
    return np.array(out)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
