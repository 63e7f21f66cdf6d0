"""System-of-systems loop: environment, sensing, encoding, translation, decoding, control.

Each step the plant advances with the previous step's actuation, both CPS
sense and encode one message per sensor, CPS A's messages are offered to
CPS B (through the bound translator, if any), and both CPS recompute their
actuation. Translated messages stand in for the missing cross-domain stream;
CPS A does not receive CPS B's messages.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import (CodecError, CoObservation, GroundTruthPair, Message, coobs_to_json,
                    format_number, message_time, pair_to_json, write_ndjson)
from .cps import (CpsError, CpsState, decode, encode_all, init_state, read_message, sense,
                  set_setpoint, update_control)
from .env import env_reset, env_step
from .scenario import Scenario, scenario_hash
from .translators.base import OracleTranslator, TranslationError, Translator
from .translators.oracle import MissingDataError

__all__ = [
    "Counters",
    "MetricsRecord",
    "EpisodeResult",
    "run_episode",
    "resolve_translator",
    "align_co_observations",
    "make_pair_corpus",
    "evaluate",
    "report_csv",
    "run_dir",
    "write_artifacts",
]

# failures of a translated message that count as a drop rather than a crash
DROP_ERRORS = (TranslationError, MissingDataError, CodecError, CpsError, LookupError,
               ValueError, FloatingPointError)


@dataclass
class Counters:
    emitted: int = 0
    decoded: int = 0
    dropped: int = 0
    rejected: int = 0

    def as_dict(self) -> dict:
        return {"emitted": self.emitted, "decoded": self.decoded,
                "dropped": self.dropped, "rejected": self.rejected}


@dataclass
class MetricsRecord:
    """One row per step; see :func:`metrics_header` for the columns."""

    header: tuple[str, ...]
    rows: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.header.index(name)]

    def block(self, prefix: str) -> np.ndarray:
        idx = [i for i, h in enumerate(self.header) if h.startswith(prefix)]
        return self.rows[:, idx]

    def to_csv(self) -> str:
        lines = [",".join(self.header)]
        for row in self.rows:
            lines.append(",".join("nan" if math.isnan(v) else format_number(v) for v in row))
        return "\n".join(lines) + "\n"


def metrics_header(s: Scenario) -> tuple[str, ...]:
    na, nb = len(s.cps_a.sensors), len(s.cps_b.sensors)
    return tuple(
        ["k", "t_seconds"]
        + [f"x_{i + 1}" for i in range(s.model.n_states)]
        + [f"yA_{i + 1}" for i in range(na)] + [f"yB_{i + 1}" for i in range(nb)]
        + [f"uA_{i + 1}" for i in range(len(s.cps_a.actuator_cols))]
        + [f"uB_{i + 1}" for i in range(len(s.cps_b.actuator_cols))]
        + ["energy", "comfort", "emitted", "decoded", "dropped", "rejected", "drift_k"]
    )


@dataclass
class EpisodeResult:
    scenario_hash: str
    seed: int
    translator: str
    metrics: MetricsRecord
    corpus_a: list[Message] = field(default_factory=list)
    corpus_b: list[Message] = field(default_factory=list)
    coobs_a: list[CoObservation] = field(default_factory=list)
    coobs_b: list[CoObservation] = field(default_factory=list)
    counters: Counters = field(default_factory=Counters)

    def energy(self) -> float:
        return float(self.metrics.column("energy").sum())

    def comfort(self) -> float:
        return float(self.metrics.column("comfort").sum())


def resolve_translator(s: Scenario, binding) -> Translator | None:
    """Accept ``None``/``"none"``, ``"oracle"``, a Translator, or a translator document path."""
    if binding is None or binding == "none":
        return None
    if binding == "oracle":
        return OracleTranslator(s.eval_graph, "A", "B", s.epoch)
    if isinstance(binding, Translator):
        return binding
    from .translators.persist import load_translator
    return load_translator(binding)


def _comfort(state: CpsState, labels: Sequence[str]) -> float:
    total = 0.0
    for lab in labels:
        b = state.x_cps[f"blend.{lab}"]
        if not math.isnan(b):
            total += (b - state.x_cps[f"setpoint.{lab}"]) ** 2
    return total


def _deliver(translator: Translator, messages: list[Message], s: Scenario):
    """Translate a step's messages; yields (source, translated list or None)."""
    many = getattr(translator, "apply_many", None)
    if many is not None:
        try:
            return [(m, [out]) for m, out in zip(messages, many(messages, s.graph_a, s.graph_b))]
        except DROP_ERRORS:
            pass
    results = []
    for m in messages:
        try:
            results.append((m, translator.translate(m, s.graph_a, s.graph_b)))
        except DROP_ERRORS:
            results.append((m, None))
    return results


def align_co_observations(messages: Sequence[Message], log: Sequence[tuple[float, dict]],
                          window: float) -> list[CoObservation]:
    """Pair each message with the reading set whose time is closest, within ``window``."""
    times = [t for t, _ in log]
    out = []
    for m in messages:
        t = message_time(m)
        i = bisect.bisect_left(times, t)
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(times) and abs(times[j] - t) <= window:
                if best is None or abs(times[j] - t) < abs(times[best] - t):
                    best = j
        if best is not None:
            out.append(CoObservation(m, t, dict(log[best][1])))
    return out


def run_episode(s: Scenario, translator=None, *, seed: int | None = None,
                collect: bool = True) -> EpisodeResult:
    """Deterministic rollout of ``s``; ``translator`` defaults to the scenario binding."""
    binding = s.translator if translator is None else translator
    t_ab = resolve_translator(s, binding)
    seed = s.seed if seed is None else int(seed)
    cfg_a, cfg_b = s.cps_a, s.cps_b
    env = env_reset(s.model, seed)
    a, b = init_state(cfg_a), init_state(cfg_b)
    u = np.zeros(s.model.n_inputs)
    counters = Counters()
    rows = []
    corpus_a, corpus_b, log_a, log_b = [], [], [], []
    probes = {}
    for p in s.probes:
        probes.setdefault(p.k, []).append(p)

    for k in range(s.steps):
        for p in probes.get(k, ()):
            cfg = s.cps(p.cps)
            state = a if p.cps == "A" else b
            label = cfg.label(p.office)
            state = set_setpoint(state, cfg, p.office, state.x_cps[f"setpoint.{label}"] + p.delta)
            if p.cps == "A":
                a = state
            else:
                b = state

        env, y = env_step(env, s.model, u)
        for f in s.faults:
            if k >= f.start:
                row = s.cps(f.cps).sensor_rows[f.sensor]
                y = y.copy()
                y[row] = f.value if f.mode == "stuck" else y[row] + f.value
        t = s.epoch + k * s.dt
        a = sense(a, cfg_a, y, t)
        b = sense(b, cfg_b, y, t)
        msgs_a, msgs_b = encode_all(a, cfg_a), encode_all(b, cfg_b)

        if collect:
            corpus_a.extend(msgs_a)
            corpus_b.extend(msgs_b)
            readings_b = {}
            for i, m in enumerate(msgs_b):
                readings_b[cfg_b.sensors[i]] = read_message(cfg_b, m)[1]
            readings_a = {}
            for i, m in enumerate(msgs_a):
                readings_a[cfg_a.sensors[i]] = read_message(cfg_a, m)[1]
            log_b.append((t, readings_b))
            log_a.append((t, readings_a))

        drift = []
        counters.emitted += len(msgs_a)
        if t_ab is None:
            for m in msgs_a:
                try:
                    b = decode(b, cfg_b, m)
                    counters.decoded += 1
                except CpsError:
                    counters.rejected += 1
        else:
            for m, outs in _deliver(t_ab, msgs_a, s):
                if outs is None:
                    counters.dropped += 1
                    continue
                try:
                    trial = b
                    for out in outs:
                        trial = decode(trial, cfg_b, out)
                        drift.append(abs(read_message(cfg_b, out)[1] - read_message(cfg_a, m)[1]))
                    b = trial
                    counters.decoded += 1
                except DROP_ERRORS:
                    counters.dropped += 1

        a = update_control(a, cfg_a)
        b = update_control(b, cfg_b)
        u = np.zeros(s.model.n_inputs)
        u[list(cfg_a.actuator_cols)] = a.u_local
        u[list(cfg_b.actuator_cols)] = b.u_local
        energy = float(u @ u)
        comfort = _comfort(a, cfg_a.labels) + _comfort(b, cfg_b.labels)
        rows.append(
            [k, t - s.epoch] + list(env.x_env) + list(a.y_local) + list(b.y_local)
            + list(a.u_local) + list(b.u_local)
            + [energy, comfort, counters.emitted, counters.decoded, counters.dropped,
               counters.rejected, float(np.mean(drift)) if drift else math.nan])

    coobs_a = align_co_observations(corpus_a, log_b, s.dt / 2) if collect else []
    coobs_b = align_co_observations(corpus_b, log_a, s.dt / 2) if collect else []
    metrics = MetricsRecord(metrics_header(s), np.array(rows, dtype=float))
    name = "none" if t_ab is None else t_ab.kind
    return EpisodeResult(scenario_hash(s), seed, name, metrics, corpus_a, corpus_b,
                         coobs_a, coobs_b, counters)


def make_pair_corpus(s: Scenario, n: int, *, seed: int | None = None,
                     episode: EpisodeResult | None = None,
                     burn_in: int = 0) -> list[GroundTruthPair]:
    """``n`` aligned (A message, oracle B message) pairs drawn without replacement from one episode.

    Messages from the first ``burn_in`` steps (the start-up transient) are
    not eligible.
    """
    if n < 0:
        raise ValueError("pair count must be >= 0")
    if n == 0:
        return []
    episode = episode or run_episode(s, "none")
    start = s.epoch + burn_in * s.dt
    corpus = [m for m in episode.corpus_a if message_time(m) >= start]
    if n > len(corpus):
        raise ValueError(f"requested {n} pairs but the episode emitted {len(corpus)} messages")
    oracle = OracleTranslator(s.eval_graph, "A", "B", s.epoch)
    rng = np.random.default_rng(s.seed if seed is None else seed)
    pairs = []
    for i in rng.permutation(len(corpus))[:n]:
        m_a = corpus[int(i)]
        m_b = oracle.apply(m_a)
        pairs.append(GroundTruthPair(m_a, m_b, f"{m_b.records[0].name}@{format_number(message_time(m_a))}"))
    return pairs


def evaluate(t, s: Scenario, *, reverse: Translator | None = None,
             round_trip_size: int = 200) -> dict:
    """All loss rows, round-trip drift and drop rate for translator ``t`` on ``s``."""
    from .translators.losses import (abstract_loss, causation_loss, correlation_on_coobs,
                                     round_trip_check)

    t_ab = resolve_translator(s, t)
    result = run_episode(s, t_ab)
    reference = run_episode(s, "oracle") if s.has_probes else None
    report = {
        "scenario": s.name,
        "scenario_hash": scenario_hash(s),
        "seed": s.seed,
        "translator": result.translator,
        "losses": {
            "causation": causation_loss(s, result, reference) if reference else None,
            "correlation": correlation_on_coobs(t_ab, result.coobs_a, s)
            if t_ab is not None else None,
            "abstract": abstract_loss(result, s.loss_lambda),
            "energy": result.energy(),
            "comfort": result.comfort(),
        },
        "messages": result.counters.as_dict(),
        "drop_rate": result.counters.dropped / max(result.counters.emitted, 1),
        "round_trip": None,
    }
    if reverse is None and isinstance(t_ab, OracleTranslator):
        reverse = t_ab.reverse()
    if t_ab is not None and reverse is not None:
        corpus = result.corpus_a[:round_trip_size]
        report["round_trip"] = round_trip_check(t_ab, reverse, corpus, s.graph_a, s.graph_b)
    return report


REPORT_COLUMNS = ("scenario", "seed", "translator", "causation", "correlation", "abstract",
                  "energy", "comfort", "drop_rate", "rt_mean_drift", "rt_max_drift",
                  "rt_preservation")


def report_csv(report: dict) -> str:
    losses, rt = report["losses"], report["round_trip"] or {}

    def fmt(v):
        if v is None:
            return ""
        return format_number(v) if isinstance(v, float) else str(v)

    values = [report["scenario"], report["seed"], report["translator"], losses["causation"],
              losses["correlation"], losses["abstract"], losses["energy"], losses["comfort"],
              float(report["drop_rate"]), rt.get("mean_drift"), rt.get("max_drift"),
              rt.get("preservation")]
    return ",".join(REPORT_COLUMNS) + "\n" + ",".join(fmt(v) for v in values) + "\n"


def run_dir(root: str | Path, s: Scenario, seed: int | None = None) -> Path:
    seed = s.seed if seed is None else seed
    return Path(root) / f"{scenario_hash(s)[:12]}-s{seed}"


def write_artifacts(out: str | Path, result: EpisodeResult | None = None,
                    report: dict | None = None) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if result is not None:
        (out / "metrics.csv").write_text(result.metrics.to_csv(), encoding="utf-8")
        (out / "corpus_a.ndjson").write_text(write_ndjson(result.corpus_a), encoding="utf-8")
        (out / "corpus_b.ndjson").write_text(write_ndjson(result.corpus_b), encoding="utf-8")
        lines = [coobs_to_json(c) for c in result.coobs_a + result.coobs_b]
        (out / "coobs.ndjson").write_text("".join(x + "\n" for x in lines), encoding="utf-8")
    if report is not None:
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
        (out / "report.csv").write_text(report_csv(report), encoding="utf-8")
    return out


def write_pairs(path: str | Path, pairs: Sequence[GroundTruthPair]) -> None:
    Path(path).write_text("".join(pair_to_json(p) + "\n" for p in pairs), encoding="utf-8")
