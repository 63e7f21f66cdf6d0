"""Loss functions: message reconstruction, correlation, causation and the abstract objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..codec import Message, numeric_view, schema_for
from ..cps import CpsError, read_message
from ..semgraph import SemanticGraph

__all__ = [
    "LOSS_KINDS",
    "LossSpec",
    "loss_reconstruction",
    "loss_correlation",
    "correlation_on_coobs",
    "causation_loss",
    "loss_causation",
    "abstract_loss",
    "loss_abstract",
    "round_trip_check",
]

LOSS_KINDS = ("causation", "correlation", "abstract", "reconstruction")


@dataclass(frozen=True)
class LossSpec:
    """Which loss to optimize.

    ``window`` limits rollout losses to the last ``window`` steps (``None``
    means from the first probe onward); ``weight`` is the comfort weight of
    the abstract loss.
    """

    kind: str = "correlation"
    window: int | None = None
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.window is not None and self.window < 1:
            raise ValueError("loss window must be >= 1")


def loss_reconstruction(m_hat: Message, m_ref: Message) -> float:
    """Numeric-view MSE plus one penalty unit per mismatched symbol."""
    if m_hat.dialect != m_ref.dialect:
        raise ValueError("reconstruction loss needs messages of the same dialect")
    schema = schema_for(m_ref.dialect, 0.0)
    x_hat, s_hat = numeric_view(m_hat, schema)
    x_ref, s_ref = numeric_view(m_ref, schema)
    mse = float(np.mean((x_hat - x_ref) ** 2))
    return mse + float(sum(a != b for a, b in zip(s_hat, s_ref)))


def loss_correlation(y_a, y_b_hat) -> float:
    y_a = np.asarray(y_a, dtype=float)
    y_b_hat = np.asarray(y_b_hat, dtype=float)
    if y_a.shape != y_b_hat.shape:
        raise ValueError(f"window lengths differ: {y_a.shape} vs {y_b_hat.shape}")
    if y_a.size == 0:
        raise ValueError("empty window")
    return float(np.mean((y_a - y_b_hat) ** 2))


def correlation_on_coobs(translator, coobs: Sequence, s) -> float:
    """Correlation loss of translated readings against the receiver's co-located readings.

    Each co-observed message is translated and decoded by the receiving CPS;
    the decoded reading is compared with that CPS's own sensor in the office
    the decoder resolved. Messages that fail to translate or decode are left
    out; if none survive the loss is infinite.
    """
    cfg_dst = s.cps(translator.target)
    sensor_of = {lab: sym for lab, sym in zip(cfg_dst.labels, cfg_dst.sensors)}
    ref, got = [], []
    many = getattr(translator, "apply_many", None)
    outs = None
    if many is not None and coobs:
        try:
            outs = many([c.message for c in coobs], s.graph_a, s.graph_b)
        except (ValueError, LookupError):
            outs = None
    for i, c in enumerate(coobs):
        try:
            out = outs[i] if outs is not None else translator.apply(c.message, s.graph_a, s.graph_b)
            label, kelvin = read_message(cfg_dst, out)
        except (CpsError, ValueError, LookupError):
            continue
        sensor = sensor_of[label]
        if sensor in c.readings:
            ref.append(c.readings[sensor])
            got.append(kelvin)
    if not ref:
        return math.inf
    return loss_correlation(ref, got)


def _window_start(s, spec: LossSpec | None) -> int:
    if spec is not None and spec.window is not None:
        return max(s.steps - spec.window, 0)
    return min(p.k for p in s.probes)


def causation_loss(s, result, reference, spec: LossSpec | None = None) -> float:
    """MSE between the CPS A sensor trajectories of two rollouts over the probe window."""
    if not s.probes:
        raise ValueError("scenario has no probe schedule")
    if result.seed != reference.seed:
        raise ValueError(f"rollout seeds differ ({result.seed} vs {reference.seed})")
    start = _window_start(s, spec)
    ya = result.metrics.block("yA_")[start:]
    yr = reference.metrics.block("yA_")[start:]
    return float(np.mean((ya - yr) ** 2))


def loss_causation(s, translator, reference=None, spec: LossSpec | None = None) -> float:
    """Causation loss of ``translator`` against oracle translations, same seed."""
    from ..harness import run_episode

    if not s.probes:
        raise ValueError("scenario has no probe schedule")
    if reference is None:
        reference = run_episode(s, "oracle", collect=False)
    result = run_episode(s, translator, collect=False)
    return causation_loss(s, result, reference, spec)


def abstract_loss(result, lam: float = 1.0) -> float:
    """Total energy plus ``lam`` times total comfort error over the rollout."""
    return float(result.metrics.column("energy").sum() + lam * result.metrics.column("comfort").sum())


def loss_abstract(s, translator, lam: float | None = None) -> float:
    from ..harness import run_episode

    result = run_episode(s, translator, collect=False)
    return abstract_loss(result, s.loss_lambda if lam is None else lam)


def round_trip_check(t_ab, t_ba, corpus: Sequence[Message], g_a: SemanticGraph,
                     g_b: SemanticGraph) -> dict:
    """Numeric and symbolic drift of ``t_ba(t_ab(m))`` against ``m``.

    A message is preserved when its symbols and its identifying numeric slots
    (the location of a dialect A message) come back unchanged.
    """
    if not corpus:
        return {"n": 0, "failures": 0, "mean_drift": None, "max_drift": None,
                "preservation": None}
    schema = schema_for(corpus[0].dialect, 0.0)
    drifts, preserved, failures = [], 0, 0
    for m in corpus:
        try:
            back = t_ba.translate(t_ab.translate(m, g_a, g_b)[0], g_a, g_b)[0]
        except (ValueError, LookupError, CpsError):
            failures += 1
            continue
        x0, s0 = numeric_view(m, schema)
        x1, s1 = numeric_view(back, schema)
        drifts.append(float(np.linalg.norm(x0 - x1)))
        keys = list(schema.key_slots)
        if s0 == s1 and np.array_equal(x0[keys], x1[keys]):
            preserved += 1
    n_ok = len(drifts)
    return {
        "n": len(corpus),
        "failures": failures,
        "mean_drift": float(np.mean(drifts)) if n_ok else None,
        "max_drift": float(np.max(drifts)) if n_ok else None,
        "preservation": preserved / len(corpus),
    }
