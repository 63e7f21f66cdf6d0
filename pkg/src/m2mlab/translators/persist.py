"""Versioned JSON documents for translators and autoencoders.

A document is plain JSON (layer sizes, row-major weights, standardization
constants, dialect tags). Its id is the SHA-256 of its canonical encoding,
so the same content always gets the same id.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..semgraph import SemanticGraph, Triple
from .base import (Autoencoder, ConstantTranslator, EndToEndTranslator, LatentMapTranslator,
                   OracleTranslator, OutputLayout, Translator)
from .features import FeatureScaler
from .mlp import MlpMap

__all__ = [
    "DocumentError",
    "FORMAT_VERSION",
    "canonical_json",
    "document_id",
    "translator_from_document",
    "autoencoder_from_document",
    "save_translator",
    "load_translator",
    "save_autoencoder",
    "load_autoencoder",
]

FORMAT_VERSION = 1


class DocumentError(ValueError):
    pass


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False)


def document_id(doc: dict) -> str:
    try:
        blob = canonical_json(doc)
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"document is not valid JSON content: {exc}") from exc
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _require(doc: dict, key: str, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise DocumentError(f"document missing {key!r}")
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise DocumentError(f"{key!r} has wrong type {type(val).__name__}")
    return val


def _net(doc) -> MlpMap:
    try:
        return MlpMap.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DocumentError(f"invalid network: {exc}") from exc


def _scaler(doc) -> FeatureScaler:
    try:
        return FeatureScaler.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DocumentError(f"invalid feature scaler: {exc}") from exc


def autoencoder_from_document(doc: dict) -> Autoencoder:
    if _require(doc, "format", str) != "m2mlab-autoencoder":
        raise DocumentError("not an autoencoder document")
    if _require(doc, "version", int) != FORMAT_VERSION:
        raise DocumentError(f"unsupported version {doc['version']}")
    domain = _require(doc, "domain", str)
    if domain not in ("A", "B"):
        raise DocumentError(f"bad domain {domain!r}")
    try:
        return Autoencoder(domain, _scaler(_require(doc, "scaler", dict)),
                           _net(_require(doc, "encoder", dict)),
                           _net(_require(doc, "decoder", dict)),
                           float(_require(doc, "epoch")), doc.get("metadata"))
    except ValueError as exc:
        raise DocumentError(str(exc)) from exc


def translator_from_document(doc: dict) -> Translator:
    """Rebuild a translator, validating shapes and finiteness."""
    if _require(doc, "format", str) != "m2mlab-translator":
        raise DocumentError("not a translator document")
    if _require(doc, "version", int) != FORMAT_VERSION:
        raise DocumentError(f"unsupported version {doc['version']}")
    kind = _require(doc, "kind", str)
    source, target = _require(doc, "source", str), _require(doc, "target", str)
    epoch = _require(doc, "epoch")
    if not isinstance(epoch, (int, float)) or isinstance(epoch, bool) or not np.isfinite(epoch):
        raise DocumentError("epoch must be a finite number")
    try:
        if kind == "oracle":
            rows = _require(doc, "eval_graph", list)
            graph = SemanticGraph("eval", [Triple(*r) for r in rows])
            return OracleTranslator(graph, source, target, epoch)
        if kind == "constant":
            numeric = _require(doc, "numeric", list)
            if not all(isinstance(v, (int, float)) and np.isfinite(v) for v in numeric):
                raise DocumentError("constant numeric slots must be finite numbers")
            return ConstantTranslator(numeric, _require(doc, "symbol", str), source, target, epoch)
        if kind == "end_to_end":
            return EndToEndTranslator(_net(_require(doc, "net", dict)),
                                      _scaler(_require(doc, "in_scaler", dict)),
                                      OutputLayout.from_dict(_require(doc, "layout", dict)),
                                      source, target, epoch, doc.get("metadata"))
        if kind == "latent_map":
            t = LatentMapTranslator(autoencoder_from_document(_require(doc, "ae_src", dict)),
                                    autoencoder_from_document(_require(doc, "ae_dst", dict)),
                                    _net(_require(doc, "latent_map", dict)), doc.get("metadata"))
            if (t.source, t.target) != (source, target):
                raise DocumentError("autoencoder domains disagree with source/target tags")
            return t
    except DocumentError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise DocumentError(f"invalid {kind} document: {exc}") from exc
    raise DocumentError(f"unknown translator kind {kind!r}")


def save_translator(t: Translator, path: str | Path) -> str:
    doc = t.to_document()
    Path(path).write_text(canonical_json(doc) + "\n", encoding="utf-8")
    return document_id(doc)


def load_translator(path: str | Path) -> Translator:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DocumentError(f"{path}: not JSON: {exc}") from exc
    return translator_from_document(doc)


def save_autoencoder(ae: Autoencoder, path: str | Path) -> str:
    doc = ae.to_document()
    Path(path).write_text(canonical_json(doc) + "\n", encoding="utf-8")
    return document_id(doc)


def load_autoencoder(path: str | Path) -> Autoencoder:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DocumentError(f"{path}: not JSON: {exc}") from exc
    return autoencoder_from_document(doc)
