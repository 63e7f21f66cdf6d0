"""Translator kinds and the common ``apply`` entry point.

Every learned translator produces its numeric fields from a map output and
its identifying symbol by nearest-neighbour lookup among the target graph's
candidates, so output symbols always come from the target vocabulary. The
message time is carried over from the source message.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..codec import (DialectSchema, Message, message_a, message_b, message_time,
                     numeric_view, schema_for, SAMPLE_EPOCH)
from ..cps import HAS_LAT, HAS_LON
from ..semgraph import SemanticGraph, cosine
from .features import FeatureScaler, featurize, name_candidates, nearest_symbol, symbol_vector
from .mlp import MlpMap
from .oracle import oracle_translate

__all__ = [
    "TranslationError",
    "NumericError",
    "Translator",
    "OracleTranslator",
    "ConstantTranslator",
    "EndToEndTranslator",
    "Autoencoder",
    "LatentMapTranslator",
    "apply",
    "build_message",
    "source_and_target_graphs",
]


class TranslationError(ValueError):
    pass


class NumericError(TranslationError):
    pass


def source_and_target_graphs(source: str, g_a: SemanticGraph, g_b: SemanticGraph):
    return (g_a, g_b) if source == "A" else (g_b, g_a)


def _snap_location(graph: SemanticGraph, lon: float, lat: float,
                   scale: tuple[float, float]) -> tuple[str, float, float]:
    """Closest known sensor location (in scaled coordinates) and its literals."""
    best, best_d = None, np.inf
    for t in graph.by_predicate(HAS_LON):
        lat_lit = graph.value(t.subject, HAS_LAT)
        if lat_lit is None:
            continue
        d = ((float(t.object) - lon) / scale[0]) ** 2 + ((float(lat_lit) - lat) / scale[1]) ** 2
        if d < best_d:
            best, best_d = t.subject, d
    if best is None:
        raise TranslationError(f"graph {graph.graph_id} has no sensor locations")
    return best, float(graph.value(best, HAS_LON)), float(graph.value(best, HAS_LAT))


def build_message(schema: DialectSchema, numeric: np.ndarray, name_query: np.ndarray,
                  graph: SemanticGraph, time: float,
                  key_scale: tuple[float, ...] = ()) -> Message:
    """Assemble a target message from decoded numeric slots and a symbol query vector."""
    numeric = np.asarray(numeric, dtype=float)
    if not (np.all(np.isfinite(numeric)) and np.all(np.isfinite(name_query))):
        raise NumericError("translator produced non-finite output")
    if schema.dialect == "A":
        lon, lat = numeric[0], numeric[1]
        service = nearest_symbol(name_query, name_candidates(graph, schema), graph)
        sensor_scale = key_scale if len(key_scale) == 2 else (1.0, 1.0)
        _, lon, lat = _snap_location(graph, lon, lat, sensor_scale)
        return message_a(service, time, lon, lat, float(numeric[schema.value_slot]), "K")
    name = nearest_symbol(name_query, name_candidates(graph, schema), graph)
    return message_b(name, float(numeric[schema.value_slot]), time, "Cel")


class Translator:
    """Maps messages of ``source`` dialect to messages of ``target`` dialect."""

    kind = "abstract"

    def __init__(self, source: str = "A", target: str = "B", epoch: float = SAMPLE_EPOCH,
                 metadata: dict | None = None):
        if {source, target} != {"A", "B"}:
            raise ValueError("translator must map between dialects A and B")
        self.source = source
        self.target = target
        self.epoch = float(epoch)
        self.metadata = dict(metadata or {})

    @property
    def source_schema(self) -> DialectSchema:
        return schema_for(self.source, self.epoch)

    @property
    def target_schema(self) -> DialectSchema:
        return schema_for(self.target, self.epoch)

    @property
    def params(self) -> np.ndarray:
        return np.zeros(0)

    def check_input(self, m: Message) -> None:
        if m.dialect != self.source:
            raise TranslationError(
                f"{self.kind} translator expects dialect {self.source}, got {m.dialect}")

    def apply(self, m: Message, g_a: SemanticGraph, g_b: SemanticGraph) -> Message:
        raise NotImplementedError

    def translate(self, m: Message, g_a: SemanticGraph, g_b: SemanticGraph) -> list[Message]:
        return [self.apply(m, g_a, g_b)]

    def _header(self) -> dict:
        return {"format": "m2mlab-translator", "version": 1, "kind": self.kind,
                "source": self.source, "target": self.target, "epoch": self.epoch}

    def to_document(self) -> dict:
        raise NotImplementedError


class OracleTranslator(Translator):
    kind = "oracle"

    def __init__(self, eval_graph: SemanticGraph, source: str = "A", target: str = "B",
                 epoch: float = SAMPLE_EPOCH):
        super().__init__(source, target, epoch)
        self.eval_graph = eval_graph

    def translate(self, m, g_a=None, g_b=None) -> list[Message]:
        self.check_input(m)
        return oracle_translate(m, self.eval_graph)

    def apply(self, m, g_a=None, g_b=None) -> Message:
        return self.translate(m, g_a, g_b)[0]

    def reverse(self) -> "OracleTranslator":
        return OracleTranslator(self.eval_graph, self.target, self.source, self.epoch)

    def to_document(self) -> dict:
        doc = self._header()
        doc["eval_graph"] = [[t.subject, t.predicate, t.object, t.literal]
                             for t in self.eval_graph]
        return doc


class ConstantTranslator(Translator):
    """Baseline that always reports the same numeric slots and symbol."""

    kind = "constant"

    def __init__(self, numeric: Sequence[float], symbol: str, source: str = "A",
                 target: str = "B", epoch: float = SAMPLE_EPOCH):
        super().__init__(source, target, epoch)
        self.numeric = np.array(numeric, dtype=float)
        self.symbol = symbol
        if self.numeric.size != len(self.target_schema.numeric) - 1:
            raise ValueError("constant translator needs every non-time numeric slot")

    @property
    def params(self) -> np.ndarray:
        return self.numeric.copy()

    def apply(self, m, g_a, g_b) -> Message:
        self.check_input(m)
        _, g_dst = source_and_target_graphs(self.source, g_a, g_b)
        schema = self.target_schema
        full = np.insert(self.numeric, schema.time_slot, 0.0)
        return build_message(schema, full, g_dst.features(self.symbol), g_dst, message_time(m))

    def to_document(self) -> dict:
        doc = self._header()
        doc.update(numeric=self.numeric.tolist(), symbol=self.symbol)
        return doc


def _symbol_blocks(x: np.ndarray, n_numeric: int, dim: int) -> np.ndarray:
    return x[n_numeric:].reshape(-1, dim)


@dataclass
class OutputLayout:
    """How an end-to-end map's output vector becomes target fields.

    Non-time numeric slots occupy the first outputs: ``value = scale * o``
    for the value slot (so the zero map emits 0) and ``shift + scale * o``
    for location key slots. The remaining ``dim`` outputs are added to the
    source symbol prior to form the symbol query.
    """

    slots: tuple[int, ...]
    scale: np.ndarray
    shift: np.ndarray
    dim: int

    def to_dict(self) -> dict:
        return {"slots": list(self.slots), "scale": self.scale.tolist(),
                "shift": self.shift.tolist(), "dim": self.dim}

    @classmethod
    def from_dict(cls, doc: dict) -> "OutputLayout":
        scale = np.array(doc["scale"], dtype=float)
        shift = np.array(doc["shift"], dtype=float)
        slots = tuple(int(s) for s in doc["slots"])
        if scale.shape != (len(slots),) or shift.shape != (len(slots),) or np.any(scale <= 0):
            raise ValueError("output layout scale/shift do not match slots")
        return cls(slots, scale, shift, int(doc["dim"]))


class EndToEndTranslator(Translator):
    kind = "end_to_end"

    def __init__(self, net: MlpMap, in_scaler: FeatureScaler, layout: OutputLayout,
                 source: str = "A", target: str = "B", epoch: float = SAMPLE_EPOCH,
                 metadata: dict | None = None):
        super().__init__(source, target, epoch, metadata)
        self.net = net
        self.in_scaler = in_scaler
        self.layout = layout
        if net.n_out != len(layout.slots) + layout.dim:
            raise ValueError("network output width does not match output layout")
        if net.n_in != in_scaler.mean.size:
            raise ValueError("network input width does not match feature scaler")

    @property
    def params(self) -> np.ndarray:
        return self.net.get_params()

    def prior(self, x: np.ndarray) -> np.ndarray:
        return _symbol_blocks(x, self.in_scaler.n_numeric, self.layout.dim).sum(axis=0)

    def forward_features(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Decoded numeric slots and symbol queries for raw source features ``X``."""
        out = self.net(self.in_scaler.transform(X))
        k = len(self.layout.slots)
        numeric = self.layout.shift + self.layout.scale * out[:, :k]
        priors = np.vstack([self.prior(x) for x in X])
        return numeric, out[:, k:] + priors

    def apply(self, m, g_a, g_b) -> Message:
        return self.apply_many([m], g_a, g_b)[0]

    def apply_many(self, messages: Sequence[Message], g_a, g_b) -> list[Message]:
        g_src, g_dst = source_and_target_graphs(self.source, g_a, g_b)
        for m in messages:
            self.check_input(m)
        X = np.vstack([featurize(m, self.source_schema, g_src) for m in messages])
        numeric, queries = self.forward_features(X)
        schema = self.target_schema
        out = []
        for m, num, q in zip(messages, numeric, queries):
            full = np.zeros(len(schema.numeric))
            full[list(self.layout.slots)] = num
            key_scale = tuple(self.layout.scale[list(self.layout.slots).index(i)]
                              for i in schema.key_slots)
            out.append(build_message(schema, full, q, g_dst, message_time(m), key_scale))
        return out

    def to_document(self) -> dict:
        doc = self._header()
        doc.update(net=self.net.to_dict(), in_scaler=self.in_scaler.to_dict(),
                   layout=self.layout.to_dict(), metadata=self.metadata)
        return doc


class Autoencoder:
    """Per-dialect encoder/decoder pair over standardized message features."""

    def __init__(self, domain: str, scaler: FeatureScaler, encoder: MlpMap, decoder: MlpMap,
                 epoch: float = SAMPLE_EPOCH, metadata: dict | None = None):
        if encoder.n_out != decoder.n_in or decoder.n_out != encoder.n_in:
            raise ValueError("encoder and decoder widths are inconsistent")
        if encoder.n_in != scaler.mean.size:
            raise ValueError("encoder input width does not match feature scaler")
        self.domain = domain
        self.scaler = scaler
        self.encoder = encoder
        self.decoder = decoder
        self.epoch = float(epoch)
        self.metadata = dict(metadata or {})

    @property
    def latent_dim(self) -> int:
        return self.encoder.n_out

    @property
    def schema(self) -> DialectSchema:
        return schema_for(self.domain, self.epoch)

    @property
    def n_params(self) -> int:
        return self.encoder.n_params + self.decoder.n_params

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.encoder.get_params(), self.decoder.get_params()])

    def set_params(self, theta: np.ndarray) -> None:
        k = self.encoder.n_params
        self.encoder.set_params(theta[:k])
        self.decoder.set_params(theta[k:])

    def features(self, messages: Sequence[Message], graph: SemanticGraph) -> np.ndarray:
        """Standardized features of ``messages``."""
        X = np.vstack([featurize(m, self.schema, graph) for m in messages])
        return self.scaler.transform(X)

    def encode(self, Z: np.ndarray) -> np.ndarray:
        return self.encoder(Z)

    def decode(self, H: np.ndarray) -> np.ndarray:
        return self.decoder(H)

    def reconstruction_mse(self, Z: np.ndarray) -> float:
        return float(np.mean((self.decode(self.encode(Z)) - Z) ** 2))

    def to_document(self) -> dict:
        return {"format": "m2mlab-autoencoder", "version": 1, "domain": self.domain,
                "epoch": self.epoch, "scaler": self.scaler.to_dict(),
                "encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict(),
                "metadata": self.metadata}


class LatentMapTranslator(Translator):
    """Source encoder, latent map, target decoder."""

    kind = "latent_map"

    def __init__(self, ae_src: Autoencoder, ae_dst: Autoencoder, latent_map: MlpMap,
                 metadata: dict | None = None):
        super().__init__(ae_src.domain, ae_dst.domain, ae_src.epoch, metadata)
        if latent_map.n_in != ae_src.latent_dim or latent_map.n_out != ae_dst.latent_dim:
            raise ValueError("latent map widths do not match the autoencoders")
        self.ae_src = ae_src
        self.ae_dst = ae_dst
        self.latent_map = latent_map

    @property
    def params(self) -> np.ndarray:
        return self.latent_map.get_params()

    def with_params(self, theta: np.ndarray) -> "LatentMapTranslator":
        m = self.latent_map.copy()
        m.set_params(theta)
        return LatentMapTranslator(self.ae_src, self.ae_dst, m, self.metadata)

    def decoded_features(self, Z_src: np.ndarray) -> np.ndarray:
        """Raw (de-standardized) target features for standardized source features."""
        H = self.ae_src.encode(Z_src)
        return self.ae_dst.scaler.inverse(self.ae_dst.decode(self.latent_map(H)))

    def apply(self, m, g_a, g_b) -> Message:
        return self.apply_many([m], g_a, g_b)[0]

    def apply_many(self, messages: Sequence[Message], g_a, g_b) -> list[Message]:
        g_src, _ = source_and_target_graphs(self.source, g_a, g_b)
        _, g_dst = source_and_target_graphs(self.source, g_a, g_b)
        for m in messages:
            self.check_input(m)
        X_dst = self.decoded_features(self.ae_src.features(messages, g_src))
        schema = self.target_schema
        n_num = len(schema.numeric)
        scale = self.ae_dst.scaler.scale
        key_scale = tuple(scale[i] for i in schema.key_slots)
        return [build_message(schema, x[:n_num], x[n_num:n_num + g_dst.dim], g_dst,
                              message_time(m), key_scale)
                for m, x in zip(messages, X_dst)]

    def to_document(self) -> dict:
        doc = self._header()
        doc.update(ae_src=self.ae_src.to_document(), ae_dst=self.ae_dst.to_document(),
                   latent_map=self.latent_map.to_dict(), metadata=self.metadata)
        return doc


def apply(t: Translator, m: Message, g_a: SemanticGraph, g_b: SemanticGraph) -> Message:
    return t.apply(m, g_a, g_b)
