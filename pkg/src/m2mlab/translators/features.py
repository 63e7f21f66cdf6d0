"""Learner-facing message features and their frozen standardization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..codec import DialectSchema, Message, message_a, message_b, numeric_view, from_kelvin
from ..cps import HAS_LAT, HAS_LON, HAS_NAME, HAS_SERVICE
from ..semgraph import SemanticGraph, trigram_vector

__all__ = [
    "symbol_vector",
    "featurize",
    "featurize_all",
    "FeatureScaler",
    "name_candidates",
    "nearest_symbol",
    "encode_reading",
]


def symbol_vector(graph: SemanticGraph, symbol: str) -> np.ndarray:
    """Graph feature of ``symbol``; symbols outside the graph get their bare trigram vector."""
    if symbol in graph:
        return graph.features(symbol)
    raw = trigram_vector(symbol, graph.dim)
    norm = np.linalg.norm(raw)
    return raw / norm if norm > 0 else raw


def featurize(m: Message, schema: DialectSchema, graph: SemanticGraph) -> np.ndarray:
    numeric, symbols = numeric_view(m, schema)
    return np.concatenate([numeric] + [symbol_vector(graph, s) for s in symbols])


def featurize_all(messages: Sequence[Message], schema: DialectSchema,
                  graph: SemanticGraph) -> np.ndarray:
    return np.vstack([featurize(m, schema, graph) for m in messages])


@dataclass
class FeatureScaler:
    """Numeric slots are standardized; symbol slots are only centered.

    Symbol features are already unit-norm, and rescaling every hashed
    coordinate to unit variance would let them swamp the numeric slots.
    """

    mean: np.ndarray
    scale: np.ndarray
    n_numeric: int

    @classmethod
    def fit(cls, X: np.ndarray, n_numeric: int) -> "FeatureScaler":
        mean = X.mean(axis=0)
        scale = np.ones(X.shape[1])
        std = X[:, :n_numeric].std(axis=0)
        scale[:n_numeric] = np.where(std > 1e-12, std, 1.0)
        return cls(mean, scale, n_numeric)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return Z * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "n_numeric": self.n_numeric}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureScaler":
        mean = np.array(doc["mean"], dtype=float)
        scale = np.array(doc["scale"], dtype=float)
        if mean.shape != scale.shape or mean.ndim != 1:
            raise ValueError("scaler mean/scale shapes differ")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(scale)) and np.all(scale > 0)):
            raise ValueError("scaler constants must be finite with positive scale")
        return cls(mean, scale, int(doc["n_numeric"]))


def name_candidates(graph: SemanticGraph, schema: DialectSchema) -> list[str]:
    """Identifying symbols of the dialect, ordered by symbol index."""
    names = {t.object for t in graph.by_predicate(schema.name_predicate)}
    index = graph.symbol_index
    return sorted(names, key=lambda s: index[s])


def nearest_symbol(query: np.ndarray, candidates: Sequence[str], graph: SemanticGraph) -> str:
    """Cosine nearest neighbour; ties go to the lowest symbol index."""
    if not candidates:
        raise LookupError(f"graph {graph.graph_id} has no candidate symbols")
    feats = np.vstack([graph.features(c) for c in candidates])
    qn = np.linalg.norm(query)
    sims = feats @ query / qn if qn > 0 else np.zeros(len(candidates))
    return candidates[int(np.argmax(sims))]


def encode_reading(domain: str, graph: SemanticGraph, sensor: str, kelvin: float,
                   time: float) -> Message:
    """What ``sensor`` of CPS ``domain`` would report for a kelvin reading."""
    if domain == "A":
        return message_a(graph.value(sensor, HAS_SERVICE), time,
                         float(graph.value(sensor, HAS_LON)),
                         float(graph.value(sensor, HAS_LAT)), kelvin, "K")
    return message_b(graph.value(sensor, HAS_NAME), from_kelvin(kelvin, "Cel"), time, "Cel")
