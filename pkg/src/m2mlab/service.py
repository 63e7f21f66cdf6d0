"""Translators as a network service: newline-delimited JSON over TCP.

Requests, one JSON object per line::

    {"op":"translate","translator_id":"<hex>","message":"<escaped JSON>"}
    {"op":"register","document":{...}}
    {"op":"list"}

Every request may carry a protocol version ``"v":1``. Responses are one
compact JSON object per line with ``status`` first and ``latency_us`` last.
Registered translators are immutable; the registry is replaced wholesale on
every registration so readers never take a lock.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading
import time
from pathlib import Path
from typing import Iterable

from .codec import CodecError, MalformedMessageError, parse, serialize
from .semgraph import SemanticGraph
from .translators.base import Translator
from .translators.persist import DocumentError, canonical_json, document_id, translator_from_document

__all__ = [
    "PROTOCOL_VERSION",
    "STATUSES",
    "ServiceError",
    "Registry",
    "TranslationService",
    "start_server",
    "request_line",
]

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
STATUSES = ("ok", "parse_error", "schema_error", "unknown_translator", "internal")
MAX_LINE = 1 << 20


class ServiceError(RuntimeError):
    pass


class Registry:
    """Content-addressed translator store, optionally mirrored to a directory."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._lock = threading.Lock()
        self._items: dict[str, Translator] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            for path in sorted(self.directory.glob("*.json")):
                try:
                    self.register(json.loads(path.read_text(encoding="utf-8")), persist=False)
                except (json.JSONDecodeError, DocumentError) as exc:
                    log.warning("skipping %s: %s", path, exc)

    def register(self, doc: dict, persist: bool = True) -> str:
        translator = translator_from_document(doc)
        tid = document_id(doc)
        with self._lock:
            if tid not in self._items:
                items = dict(self._items)
                items[tid] = translator
                self._items = items
                if persist and self.directory is not None:
                    (self.directory / f"{tid}.json").write_text(canonical_json(doc) + "\n",
                                                                encoding="utf-8")
        return tid

    def add(self, translator: Translator) -> str:
        return self.register(translator.to_document())

    def get(self, tid: str) -> Translator | None:
        return self._items.get(tid)

    def ids(self) -> list[str]:
        return sorted(self._items)

    def __len__(self) -> int:
        return len(self._items)


def _response(status: str, latency_start: float, **fields) -> bytes:
    body = {"status": status}
    body.update(fields)
    body["latency_us"] = max(int((time.perf_counter() - latency_start) * 1e6), 0)
    return (json.dumps(body, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


class TranslationService:
    """Request handling, independent of the transport."""

    def __init__(self, registry: Registry, g_a: SemanticGraph, g_b: SemanticGraph):
        self.registry = registry
        self.g_a = g_a
        self.g_b = g_b

    def handle_line(self, line: bytes | str) -> bytes:
        start = time.perf_counter()
        try:
            text = line.decode("utf-8") if isinstance(line, bytes) else line
            req = json.loads(text)
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            return _response("parse_error", start, error=f"request is not JSON: {exc}")
        if not isinstance(req, dict):
            return _response("parse_error", start, error="request must be a JSON object")
        try:
            return self._dispatch(req, start)
        except Exception as exc:  # the connection must survive any request
            log.exception("internal error handling request")
            return _response("internal", start, error=f"{type(exc).__name__}: {exc}")

    def _dispatch(self, req: dict, start: float) -> bytes:
        version = req.get("v", PROTOCOL_VERSION)
        if version != PROTOCOL_VERSION:
            return _response("schema_error", start, error=f"unsupported protocol version {version!r}")
        op = req.get("op")
        if op == "list":
            return _response("ok", start, translators=self.registry.ids())
        if op == "register":
            doc = req.get("document")
            if not isinstance(doc, dict):
                return _response("schema_error", start, error="register needs a document object")
            try:
                tid = self.registry.register(doc)
            except DocumentError as exc:
                return _response("schema_error", start, error=str(exc))
            return _response("ok", start, translator_id=tid)
        if op == "translate":
            return self._translate(req, start)
        return _response("schema_error", start, error=f"unknown op {op!r}")

    def _translate(self, req: dict, start: float) -> bytes:
        tid, text = req.get("translator_id"), req.get("message")
        if not isinstance(tid, str) or not isinstance(text, str):
            return _response("schema_error", start,
                             error="translate needs string translator_id and message")
        translator = self.registry.get(tid)
        if translator is None:
            return _response("unknown_translator", start, error=f"no translator {tid!r}")
        try:
            m = parse(text, translator.source)
        except MalformedMessageError as exc:
            return _response("parse_error", start, error=str(exc))
        except CodecError as exc:
            return _response("schema_error", start, error=str(exc))
        try:
            outs = translator.translate(m, self.g_a, self.g_b)
        except (ValueError, LookupError) as exc:
            return _response("schema_error", start, error=f"cannot translate: {exc}")
        translated = "\n".join(serialize(o).decode("utf-8") for o in outs)
        return _response("ok", start, translated=translated)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        service: TranslationService = self.server.service
        while True:
            try:
                line = self.rfile.readline(MAX_LINE + 1)
            except (ConnectionError, OSError):
                return
            if not line:
                return
            if len(line) > MAX_LINE and not line.endswith(b"\n"):
                reply = _response("parse_error", time.perf_counter(), error="line too long")
                # discard the rest of the oversized line
                while line and not line.endswith(b"\n"):
                    line = self.rfile.readline(MAX_LINE + 1)
            elif not line.strip():
                continue
            else:
                reply = service.handle_line(line.rstrip(b"\r\n"))
            try:
                self.wfile.write(reply)
                self.wfile.flush()
            except (ConnectionError, OSError):
                return


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    # bursts of simultaneous clients overflow the default backlog of 5
    request_queue_size = 256

    def __init__(self, address, service: TranslationService):
        self.service = service
        super().__init__(address, _Handler)


def start_server(address: tuple[str, int], service: TranslationService) -> _Server:
    """Bind and serve in a background thread; call ``shutdown()`` then ``server_close()``."""
    try:
        server = _Server(address, service)
    except OSError as exc:
        raise ServiceError(f"cannot listen on {address[0]}:{address[1]}: {exc}") from exc
    thread = threading.Thread(target=server.serve_forever, name="m2mlab-service", daemon=True)
    thread.start()
    server.thread = thread
    return server


def request_line(op: str, **fields) -> bytes:
    body = {"op": op}
    body.update(fields)
    return (json.dumps(body, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ServiceError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def iter_responses(lines: Iterable[bytes], service: TranslationService) -> list[bytes]:
    """Handle lines sequentially, as a single connection would."""
    return [service.handle_line(line.rstrip(b"\r\n")) for line in lines if line.strip()]
