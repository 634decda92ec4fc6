"""Command-line driver: Monte Carlo experiments and networked parties."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from . import wire
from .adversary import ALL_RECT, BasisPolicy, InterceptResend, StoreAndForward, TransparentRelay
from .experiments import cmd_attack, cmd_honest, cmd_replay
from .keyspace import KeySpaceError
from .protocol import Key, ProtocolError, SessionParams, Variant
from .rng import Rng

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NETWORK = 3
EXIT_REFUSED = 4

log = logging.getLogger("qia_lab")


def _session_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", default=Variant.BOB_NONCE.value, choices=[v.value for v in Variant])
    p.add_argument("--key-len", type=int, default=16)
    p.add_argument("--d", type=int, default=16, help="authentication qubits per session")
    p.add_argument("--nonce-len", type=int, default=128)
    p.add_argument("--decoy-prob", type=float, default=0.5)
    p.add_argument("--short-circuit", action="store_true",
                   help="Bob stops measuring after the first mismatch")
    p.add_argument("--seed", type=int, default=0)


def _report_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--out", choices=["json", "csv"], default="json")
    p.add_argument("--output", help="write here instead of stdout")
    p.add_argument("--workers", type=int, default=1)


def _net_flags(p: argparse.ArgumentParser, listen: bool) -> None:
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7300 if listen else 7301)
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--output", help="write transcript JSON lines here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qia-lab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("honest", help="acceptance rates for equal and unequal keys")
    _session_flags(p)
    _report_flags(p)

    p = sub.add_parser("attack", help="intercept-resend key-space reduction")
    _session_flags(p)
    _report_flags(p)
    p.add_argument("--policy", action="append",
                   help="AllRectilinear | AllDiagonal | UniformRandomPerQubit | FixedPattern:0101..."
                        " (repeat to vary the policy across sessions)")
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--no-eliminate", action="store_true",
                   help="only measure Bob's acceptance under interception")

    p = sub.add_parser("replay", help="stored-qubit replay and live relay forgery")
    _session_flags(p)
    _report_flags(p)
    p.add_argument("--no-relay", action="store_true")

    for name, helptext in (("serve", "run Alice (prover) and wait for verifiers"),
                           ("connect", "run Bob (verifier) against a prover")):
        p = sub.add_parser(name, help=helptext)
        _session_flags(p)
        _net_flags(p, listen=name == "serve")
        p.add_argument("--key", help="shared key in hex (default: derived from --seed)")

    p = sub.add_parser("proxy", help="run Eve between a verifier and a prover")
    _session_flags(p)
    _net_flags(p, listen=True)
    p.add_argument("--upstream-host", default="127.0.0.1")
    p.add_argument("--upstream-port", type=int, default=7300)
    p.add_argument("--strategy", choices=["transparent", "intercept", "store"], default="transparent")
    p.add_argument("--policy", default=str(ALL_RECT))
    return parser


def _params(args) -> SessionParams:
    return SessionParams(key_len=args.key_len, nonce_len=args.nonce_len, d=args.d,
                         variant=Variant(args.variant), decoy_prob=args.decoy_prob,
                         short_circuit=args.short_circuit)


def _key(args) -> Key:
    if args.key:
        return Key(int(args.key, 16), args.key_len)
    return Key.random(Rng(args.seed).spawn("key"), args.key_len)


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _lines_sink(path: Optional[str]):
    fh = open(path, "w") if path else sys.stdout

    def write(obj: dict) -> None:
        fh.write(json.dumps(obj, sort_keys=True) + "\n")
        fh.flush()

    return write, (fh if path else None)


def _run_report(args, params: SessionParams) -> int:
    if args.command == "honest":
        rep = cmd_honest(params, args.trials, args.seed, workers=args.workers)
    elif args.command == "attack":
        policies = [BasisPolicy.parse(p) for p in (args.policy or [str(ALL_RECT)])]
        rep = cmd_attack(params, policies, args.sessions, args.trials, args.seed,
                         eliminate=not args.no_eliminate, workers=args.workers)
    else:
        rep = cmd_replay(params, args.trials, args.seed, relay=not args.no_relay, workers=args.workers)
    _emit(rep.to_json(indent=2) if args.out == "json" else rep.to_csv(), args.output)
    return EXIT_OK


def _run_party(args, params: SessionParams) -> int:
    write, fh = _lines_sink(args.output)
    try:
        if args.command == "serve":
            srv = wire.listen(args.host, args.port)
            print(f"listening on {args.host}:{srv.getsockname()[1]}", file=sys.stderr, flush=True)
            try:
                wire.serve_alice(srv, _key(args), params, args.seed, args.sessions,
                                 lambda i, tr: write({"session": i, "role": "alice", **tr.to_dict()}))
            finally:
                srv.close()
        elif args.command == "connect":
            wire.run_bob(args.host, args.port, _key(args), params, args.seed, args.sessions,
                         lambda i, tr: write({"session": i, "role": "bob", **tr.to_dict()}))
        else:
            strategy = {
                "transparent": TransparentRelay,
                "store": StoreAndForward,
                "intercept": lambda: InterceptResend(BasisPolicy.parse(args.policy)),
            }[args.strategy]()
            srv = wire.listen(args.host, args.port)
            print(f"listening on {args.host}:{srv.getsockname()[1]}", file=sys.stderr, flush=True)

            def emit(i: int, frag: wire.ProxyFragment) -> None:
                obs = []
                if isinstance(strategy, InterceptResend) and strategy.captures:
                    obs = [o.__dict__ for o in strategy.captures[-1].observations]
                write({"session": i, "role": "eve", "aborted": frag.aborted,
                       "actions": {str(k): v for k, v in frag.actions.items()}, "observations": obs})
                if frag.aborted:
                    raise wire.ConnectionLost(frag.aborted)

            try:
                wire.serve_proxy(srv, args.upstream_host, args.upstream_port, strategy, params,
                                 args.seed, args.sessions, emit)
            finally:
                srv.close()
    finally:
        if fh is not None:
            fh.close()
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        params = _params(args)
    except ValueError as exc:
        parser.error(str(exc))
    try:
        if args.command in ("honest", "attack", "replay"):
            return _run_report(args, params)
        return _run_party(args, params)
    except KeySpaceError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (wire.FramingError, wire.ReplayError, ProtocolError, OSError) as exc:
        print(f"session aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
