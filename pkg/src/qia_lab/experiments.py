"""Monte Carlo experiments and their reports.

Every trial draws from ``Rng(seed).spawn("trial", i)`` only, so results do
not depend on how trials are split across worker processes and any report
can be regenerated from its echoed config.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

from .adversary import (
    ALL_RECT,
    BasisPolicy,
    InterceptResend,
    StoreAndForward,
    capture_transmission,
    eliminate_capture,
    intersect_sessions,
    replay_attack,
)
from .keyspace import KeySpace, false_survival_fraction, survival_fraction
from .protocol import Key, Outcome, SessionParams, Variant, party_streams, run_session
from .rng import Rng

SCHEMA_VERSION = 1

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qia-lab experiment report",
    "type": "object",
    "required": ["schema_version", "experiment", "config", "trials", "aggregates"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": ["honest", "attack", "replay"]},
        "config": {
            "type": "object",
            "required": ["params", "trials", "seed"],
            "properties": {
                "params": {
                    "type": "object",
                    "required": ["key_len", "nonce_len", "d", "variant", "decoy_prob", "short_circuit"],
                },
                "trials": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "trials": {"type": "array", "items": {"type": "object", "required": ["trial"]}},
        "aggregates": {
            "type": "object",
            "required": ["n_trials", "accept_rate", "std_error", "wall_time"],
            "properties": {
                "n_trials": {"type": "integer"},
                "accept_rate": {"type": ["number", "null"]},
                "mean_survival_fraction": {"type": ["number", "null"]},
                "std_error": {"type": ["number", "null"]},
                "per_session_factors": {"type": ["array", "null"], "items": {"type": "number"}},
                "wall_time": {"type": "number", "minimum": 0},
            },
        },
    },
}

CSV_COLUMNS = {
    "honest": ["trial", "equal_accept", "unequal_accept"],
    "attack": ["trial", "true_key_hex", "accepted_sessions", "survivors", "survival_fraction",
               "false_survival_fraction", "contained", "sizes", "decoys_discarded"],
    "replay": ["trial", "replay_accept", "relay_accept"],
}


class ReportError(ValueError):
    """A report's aggregates do not follow from its trial records."""


def _rate(flags: Sequence[Optional[bool]]) -> Optional[float]:
    vals = [bool(f) for f in flags if f is not None]
    return sum(vals) / len(vals) if vals else None


def _binom_se(p: Optional[float], n: int) -> Optional[float]:
    if p is None or n == 0:
        return None
    return math.sqrt(p * (1 - p) / n)


def _mean_se(values: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), se


def aggregate(experiment: str, trials: list[dict]) -> dict:
    """Aggregates derived from per-trial records (``wall_time`` excluded)."""
    n = len(trials)
    out: dict = {"n_trials": n, "accept_rate": None, "mean_survival_fraction": None,
                 "std_error": None, "per_session_factors": None}
    if experiment == "honest":
        out["accept_rate"] = _rate([t["equal_accept"] for t in trials])
        out["false_accept_rate"] = _rate([t["unequal_accept"] for t in trials])
        target = out["false_accept_rate"] if out["false_accept_rate"] is not None else out["accept_rate"]
        out["std_error"] = _binom_se(target, n)
    elif experiment == "attack":
        accepts = [a for t in trials for a in t["session_accepts"]]
        out["accept_rate"] = _rate(accepts)
        fracs = [t["survival_fraction"] for t in trials if t["survival_fraction"] is not None]
        out["mean_survival_fraction"], out["std_error"] = _mean_se(fracs)
        falses = [t["false_survival_fraction"] for t in trials if t["false_survival_fraction"] is not None]
        out["mean_false_survival_fraction"], out["false_std_error"] = _mean_se(falses)
        out["accept_std_error"] = _binom_se(out["accept_rate"], len(accepts))
        if fracs:
            sizes = np.array([t["sizes"] for t in trials], dtype=float)
            full = float(trials[0]["keyspace_size"])
            prev = np.hstack([np.full((sizes.shape[0], 1), full), sizes[:, :-1]])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(prev > 0, sizes / prev, 0.0)
            out["per_session_factors"] = [float(x) for x in ratio.mean(axis=0)]
            out["containment_violations"] = sum(not t["contained"] for t in trials)
            out["monotonicity_violations"] = sum(
                any(b > a for a, b in zip(t["sizes"], t["sizes"][1:])) for t in trials
            )
    elif experiment == "replay":
        out["accept_rate"] = _rate([t["replay_accept"] for t in trials])
        out["relay_accept_rate"] = _rate([t["relay_accept"] for t in trials])
        out["std_error"] = _binom_se(out["accept_rate"], n)
    else:
        raise ReportError(f"unknown experiment {experiment!r}")
    return out


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    trials: list[dict]
    aggregates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "experiment": self.experiment,
                "config": self.config, "trials": self.trials, "aggregates": self.aggregates}

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=False)

    def to_csv(self) -> str:
        cols = CSV_COLUMNS[self.experiment]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for t in self.trials:
            row = dict(t)
            if "sizes" in row:
                row["sizes"] = ";".join(map(str, row["sizes"]))
            writer.writerow(row)
        return buf.getvalue()

    def validate(self) -> None:
        """Check the aggregates against a recomputation from the trial records."""
        fresh = aggregate(self.experiment, self.trials)
        for name, value in fresh.items():
            have = self.aggregates.get(name)
            if isinstance(value, float) and isinstance(have, (int, float)):
                if not math.isclose(value, have, rel_tol=1e-12, abs_tol=1e-15):
                    raise ReportError(f"aggregate {name}: stored {have}, recomputed {value}")
            elif isinstance(value, list) and isinstance(have, list):
                if not np.allclose(value, have, rtol=1e-12, atol=1e-15):
                    raise ReportError(f"aggregate {name} does not match its trials")
            elif value != have:
                raise ReportError(f"aggregate {name}: stored {have!r}, recomputed {value!r}")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ReportError("unsupported report schema version")
        rep = cls(data["experiment"], data["config"], data["trials"], data["aggregates"])
        rep.validate()
        return rep


def trial_rng(seed: int, i: int) -> Rng:
    return Rng(seed).spawn("trial", i)


def _distinct_key(rng: Rng, other: Key) -> Key:
    while True:
        k = Key.random(rng, other.length)
        if k != other:
            return k


def _run_trials(fn: Callable[[int], dict], trials: int, workers: int) -> list[dict]:
    if workers <= 1 or trials < 2 * workers:
        return [fn(i) for i in range(trials)]
    chunks = [range(w, trials, workers) for w in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(partial(_run_chunk, fn), chunks)
        records = [r for part in parts for r in part]
    return sorted(records, key=lambda r: r["trial"])


def _run_chunk(fn: Callable[[int], dict], idx: range) -> list[dict]:
    return [fn(i) for i in idx]


def _finish(name: str, config: dict, records: list[dict], t0: float) -> ExperimentReport:
    agg = aggregate(name, records)
    agg["wall_time"] = time.perf_counter() - t0
    return ExperimentReport(name, config, records, agg)


# -- honest runs ----------------------------------------------------------------


def _honest_trial(params: SessionParams, seed: int, equal: bool, unequal: bool, i: int) -> dict:
    rng = trial_rng(seed, i)
    k_a = Key.random(rng, params.key_len)
    rec: dict = {"trial": i, "equal_accept": None, "unequal_accept": None}
    if equal:
        rec["equal_accept"] = run_session(k_a, k_a, params, None, rng.spawn("equal"), record=False).accepted
    if unequal:
        k_b = _distinct_key(rng, k_a)
        rec["unequal_accept"] = run_session(k_a, k_b, params, None, rng.spawn("unequal"), record=False).accepted
    return rec


def cmd_honest(params: SessionParams, trials: int, seed: int, *, equal: bool = True,
               unequal: bool = True, workers: int = 1) -> ExperimentReport:
    """Acceptance rates with matching keys and with independent random keys."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    t0 = time.perf_counter()
    fn = partial(_honest_trial, params, seed, equal, unequal)
    records = _run_trials(fn, trials, workers)
    config = {"params": params.to_dict(), "trials": trials, "seed": seed,
              "equal": equal, "unequal": unequal}
    return _finish("honest", config, records, t0)


# -- key-space reduction --------------------------------------------------------


def _attack_trial(params: SessionParams, policies: tuple[BasisPolicy, ...], sessions: int,
                  seed: int, do_eliminate: bool, i: int) -> dict:
    rng = trial_rng(seed, i)
    key = Key.random(rng, params.key_len)
    keyspace = KeySpace.exhaustive(params.key_len)
    accepts, sizes, decoys = [], [], 0
    contained = True
    running = None
    for j in range(sessions):
        eve = InterceptResend(policies[j % len(policies)])
        tr = run_session(key, key, params, eve, rng.spawn("session", j), record=False)
        accepts.append(tr.accepted)
        cap = eve.captures[0]
        decoys += cap.discarded_decoys
        if do_eliminate:
            s = eliminate_capture(keyspace, cap)
            contained &= key.value in s
            running = s if running is None else intersect_sessions([running, s])
            contained &= key.value in running
            sizes.append(len(running))
    rec = {"trial": i, "true_key_hex": key.hex, "session_accepts": accepts,
           "accepted_sessions": sum(accepts), "keyspace_size": len(keyspace),
           "sizes": sizes, "decoys_discarded": decoys, "contained": contained,
           "survivors": None, "survival_fraction": None, "false_survival_fraction": None}
    if running is not None:
        rec["survivors"] = len(running)
        rec["survival_fraction"] = survival_fraction(running)
        rec["false_survival_fraction"] = false_survival_fraction(running, key.value)
    return rec


def cmd_attack(params: SessionParams, policy: BasisPolicy | Sequence[BasisPolicy] = ALL_RECT,
               sessions: int = 1, trials: int = 200, seed: int = 0, *,
               eliminate: bool = True, workers: int = 1) -> ExperimentReport:
    """Intercept ``sessions`` runs per trial, eliminate and intersect.

    With several policies, session j uses ``policies[j % len(policies)]``.
    ``eliminate=False`` only measures Bob's acceptance under interception
    (no key enumeration, so no key-length cap applies).
    """
    policies = (policy,) if isinstance(policy, BasisPolicy) else tuple(policy)
    if not policies:
        raise ValueError("at least one basis policy is required")
    if sessions < 1 or trials < 1:
        raise ValueError("sessions and trials must be >= 1")
    if eliminate:
        KeySpace.exhaustive(params.key_len)._check_cap()
    t0 = time.perf_counter()
    fn = partial(_attack_trial, params, policies, sessions, seed, eliminate)
    records = _run_trials(fn, trials, workers)
    config = {"params": params.to_dict(), "trials": trials, "seed": seed, "sessions": sessions,
              "policies": [str(p) for p in policies], "eliminate": eliminate}
    return _finish("attack", config, records, t0)


# -- replay ---------------------------------------------------------------------


def _replay_trial(params: SessionParams, seed: int, relay: bool, i: int) -> dict:
    rng = trial_rng(seed, i)
    key = Key.random(rng, params.key_len)
    a_rng, b_rng, e_rng = party_streams(rng.spawn("replay"))
    # Alice picks the challenge herself in that variant; otherwise Eve poses as verifier
    cap_rng = a_rng if params.variant is Variant.ALICE_NONCE else e_rng
    stored = capture_transmission(key, params, cap_rng)
    rec = {"trial": i, "replay_accept": replay_attack(params.variant, stored, key, b_rng) is Outcome.ACCEPT,
           "relay_accept": None}
    if relay:
        tr = run_session(key, key, params, StoreAndForward(), rng.spawn("relay"), record=False)
        rec["relay_accept"] = tr.accepted
    return rec


def cmd_replay(params: SessionParams, trials: int, seed: int, *, relay: bool = True,
               workers: int = 1) -> ExperimentReport:
    """Forgery rate of a stored-qubit replay, plus a live store-and-forward relay."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    t0 = time.perf_counter()
    fn = partial(_replay_trial, params, seed, relay)
    records = _run_trials(fn, trials, workers)
    config = {"params": params.to_dict(), "trials": trials, "seed": seed, "relay": relay}
    return _finish("replay", config, records, t0)


def rerun(report: ExperimentReport, workers: int = 1) -> ExperimentReport:
    """Regenerate a report from its echoed config."""
    cfg = report.config
    params = SessionParams.from_dict(cfg["params"])
    if report.experiment == "honest":
        return cmd_honest(params, cfg["trials"], cfg["seed"], equal=cfg["equal"],
                          unequal=cfg["unequal"], workers=workers)
    if report.experiment == "attack":
        return cmd_attack(params, [BasisPolicy.parse(p) for p in cfg["policies"]], cfg["sessions"],
                          cfg["trials"], cfg["seed"], eliminate=cfg["eliminate"], workers=workers)
    return cmd_replay(params, cfg["trials"], cfg["seed"], relay=cfg["relay"], workers=workers)
