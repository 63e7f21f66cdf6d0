"""Per-CPS metadata graphs and sub-symbolic symbol features.

Symbols are featurized by hashing padded character trigrams (FNV-1a, signed by
the popcount parity of the hash) into a fixed-width vector, adding half the
trigram mass of every 1-hop neighbour, and L2-normalizing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

__all__ = [
    "Triple",
    "SemanticGraph",
    "SymbolFeature",
    "GraphError",
    "fnv1a_32",
    "trigrams",
    "trigram_vector",
    "cosine",
    "graph_add",
    "symbol_features",
    "parse_ntriples",
    "format_ntriples",
]

FEATURE_DIM = 64
NEIGHBOR_WEIGHT = 0.5


class GraphError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Triple:
    subject: str
    predicate: str
    object: str
    literal: bool = False

    def __post_init__(self) -> None:
        for part in (self.subject, self.predicate, self.object):
            if not isinstance(part, str) or not part:
                raise GraphError(f"triple components must be non-empty strings: {self!r}")


@dataclass(frozen=True)
class SymbolFeature:
    symbol: str
    vector: np.ndarray


def fnv1a_32(data: bytes) -> int:
    h = 0x811C9DC5
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def trigrams(symbol: str) -> list[str]:
    padded = f"^{symbol}$"
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


def trigram_vector(symbol: str, dim: int = FEATURE_DIM) -> np.ndarray:
    """Unnormalized signed hashed trigram counts of ``symbol``."""
    vec = np.zeros(dim)
    for gram in trigrams(symbol):
        h = fnv1a_32(gram.encode("utf-8"))
        sign = -1.0 if bin(h).count("1") & 1 else 1.0
        vec[h % dim] += sign
    return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


class SemanticGraph:
    """Set of triples with a symbol index and cached symbol features.

    The symbol index assigns ids in sorted symbol order, so it does not depend
    on insertion order.
    """

    def __init__(self, graph_id: str, triples: Iterable[Triple] = (), dim: int = FEATURE_DIM):
        self.graph_id = graph_id
        self.dim = dim
        self._triples: set[Triple] = set()
        self._counts: dict[str, int] = {}
        self._out: dict[str, set[str]] = {}
        self._in: dict[str, set[str]] = {}
        self._index: dict[str, int] | None = None
        self._by_pred: dict[str, list[Triple]] | None = None
        self._features: dict[str, np.ndarray] = {}
        for t in triples:
            self.add(t)

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self._triples))

    def __contains__(self, item) -> bool:
        if isinstance(item, Triple):
            return item in self._triples
        return item in self._counts

    def add(self, t: Triple) -> "SemanticGraph":
        if not isinstance(t, Triple):
            t = Triple(*t)
        if t in self._triples:
            return self
        self._triples.add(t)
        for sym in (t.subject, t.predicate, t.object):
            self._counts[sym] = self._counts.get(sym, 0) + 1
        self._out.setdefault(t.subject, set()).add(t.object)
        self._in.setdefault(t.object, set()).add(t.subject)
        self._index = None
        self._by_pred = None
        self._features.clear()
        return self

    @property
    def triples(self) -> frozenset[Triple]:
        return frozenset(self._triples)

    @property
    def symbol_index(self) -> dict[str, int]:
        if self._index is None:
            self._index = {s: i for i, s in enumerate(sorted(self._counts))}
        return self._index

    def neighbors(self, symbol: str) -> set[str]:
        return self._out.get(symbol, set()) | self._in.get(symbol, set())

    def _predicate_index(self) -> dict[str, list[Triple]]:
        if self._by_pred is None:
            index: dict[str, list[Triple]] = {}
            for t in sorted(self._triples):
                index.setdefault(t.predicate, []).append(t)
            self._by_pred = index
        return self._by_pred

    def objects(self, subject: str, predicate: str) -> list[str]:
        return [t.object for t in self._predicate_index().get(predicate, ())
                if t.subject == subject]

    def subjects(self, predicate: str, obj: str) -> list[str]:
        return [t.subject for t in self._predicate_index().get(predicate, ())
                if t.object == obj]

    def value(self, subject: str, predicate: str) -> str | None:
        objs = self.objects(subject, predicate)
        return objs[0] if objs else None

    def by_predicate(self, predicate: str) -> list[Triple]:
        return list(self._predicate_index().get(predicate, ()))

    def features(self, symbol: str) -> np.ndarray:
        if symbol not in self._counts:
            raise KeyError(f"symbol {symbol!r} not in graph {self.graph_id}")
        vec = self._features.get(symbol)
        if vec is None:
            raw = trigram_vector(symbol, self.dim)
            for nb in sorted(self.neighbors(symbol)):
                raw = raw + NEIGHBOR_WEIGHT * trigram_vector(nb, self.dim)
            norm = np.linalg.norm(raw)
            vec = raw / norm if norm > 0 else raw
            vec.setflags(write=False)
            self._features[symbol] = vec
        return vec

    def union(self, other: "SemanticGraph", graph_id: str | None = None) -> "SemanticGraph":
        return SemanticGraph(graph_id or self.graph_id, list(self) + list(other), self.dim)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(format_ntriples(self), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, graph_id: str) -> "SemanticGraph":
        return cls(graph_id, parse_ntriples(Path(path).read_text(encoding="utf-8")))


def graph_add(graph: SemanticGraph, t: Triple) -> SemanticGraph:
    return graph.add(t)


def symbol_features(graph: SemanticGraph, symbol: str) -> SymbolFeature:
    return SymbolFeature(symbol, graph.features(symbol))


_ESCAPES = {"n": "\n", "r": "\r"}


def _escape(text: str, close: str) -> str:
    return (text.replace("\\", "\\\\").replace(close, "\\" + close)
            .replace("\n", "\\n").replace("\r", "\\r"))


def format_ntriples(triples: Iterable[Triple]) -> str:
    lines = []
    for t in sorted(triples):
        obj = f'"{_escape(t.object, chr(34))}"' if t.literal else f"<{_escape(t.object, '>')}>"
        lines.append(f"<{_escape(t.subject, '>')}> <{_escape(t.predicate, '>')}> {obj} .")
    return "".join(line + "\n" for line in lines)


def _read_term(line: str, pos: int, lineno: int) -> tuple[str, bool, int]:
    while pos < len(line) and line[pos] == " ":
        pos += 1
    if pos >= len(line):
        raise GraphError(f"line {lineno}: unexpected end of line")
    opener = line[pos]
    if opener not in '<"':
        raise GraphError(f"line {lineno}: expected <iri> or \"literal\"")
    close = ">" if opener == "<" else '"'
    out, i = [], pos + 1
    while i < len(line):
        ch = line[i]
        if ch == "\\" and i + 1 < len(line):
            out.append(_ESCAPES.get(line[i + 1], line[i + 1]))
            i += 2
            continue
        if ch == close:
            return "".join(out), opener == '"', i + 1
        out.append(ch)
        i += 1
    raise GraphError(f"line {lineno}: unterminated {'IRI' if opener == '<' else 'literal'}")


def parse_ntriples(text: str) -> list[Triple]:
    triples = []
    for lineno, line in enumerate(text.split("\n"), 1):
        line = line.strip(" \t\r")
        if not line or line.startswith("#"):
            continue
        s, s_lit, pos = _read_term(line, 0, lineno)
        p, p_lit, pos = _read_term(line, pos, lineno)
        o, o_lit, pos = _read_term(line, pos, lineno)
        if s_lit or p_lit:
            raise GraphError(f"line {lineno}: subject and predicate must be IRIs")
        if line[pos:].strip() != ".":
            raise GraphError(f"line {lineno}: expected terminating ' .'")
        triples.append(Triple(s, p, o, o_lit))
    return triples
