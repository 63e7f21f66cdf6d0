"""Strict parser/serializer for the two SenML-style message dialects.

Dialect A::

    [{"bn":"127.0.0.1/temp-service","bt":1549359472},
     {"u":"lon","v":65.61721},{"u":"lat","v":22.13683},{"u":"K","v":253}]

Dialect B::

    [{"n":"office-A2312-temp-sensor","u":"Cel","v":-20.4,"t":1549359472}]

Canonical serialization writes keys in the order ``bn,bt,n,u,v,t``, no
whitespace, and the shortest decimal that round-trips a 64-bit float.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CodecError",
    "MalformedMessageError",
    "UnknownKeyError",
    "UnitError",
    "MissingFieldError",
    "SchemaMismatchError",
    "Unit",
    "UNITS",
    "Record",
    "Message",
    "GroundTruthPair",
    "CoObservation",
    "SAMPLE_EPOCH",
    "DialectSchema",
    "SCHEMA_A",
    "SCHEMA_B",
    "schema_for",
    "parse",
    "serialize",
    "format_number",
    "numeric_view",
    "to_kelvin",
    "from_kelvin",
    "message_time",
    "read_ndjson",
    "write_ndjson",
    "pair_to_json",
    "pair_from_json",
    "coobs_to_json",
    "coobs_from_json",
]

KEY_ORDER = ("bn", "bt", "n", "u", "v", "t")
_STRING_KEYS = {"bn", "n", "u"}
_NUMBER_KEYS = {"bt", "v", "t"}
DIALECT_KEYS = {"A": {"bn", "bt", "u", "v"}, "B": {"n", "u", "v", "t"}}

# conversions are quantized so that decimal values convert exactly
CONVERSION_DECIMALS = 9


class CodecError(ValueError):
    pass


class MalformedMessageError(CodecError):
    pass


class UnknownKeyError(CodecError):
    pass


class UnitError(CodecError):
    pass


class MissingFieldError(CodecError):
    pass


class SchemaMismatchError(CodecError):
    pass


@dataclass(frozen=True)
class Unit:
    symbol: str
    quantity: str
    base: str
    scale: float = 1.0
    offset: float = 0.0


UNITS: dict[str, Unit] = {
    "K": Unit("K", "temperature", "K"),
    "Cel": Unit("Cel", "temperature", "K", 1.0, 273.15),
    "lon": Unit("lon", "longitude", "deg"),
    "lat": Unit("lat", "latitude", "deg"),
}


def to_kelvin(value: float, unit: str) -> float:
    u = UNITS[unit]
    if u.base != "K":
        raise UnitError(f"unit {unit!r} is not a temperature")
    return round(value * u.scale + u.offset, CONVERSION_DECIMALS)


def from_kelvin(value: float, unit: str) -> float:
    u = UNITS[unit]
    if u.base != "K":
        raise UnitError(f"unit {unit!r} is not a temperature")
    return round((value - u.offset) / u.scale, CONVERSION_DECIMALS)


@dataclass(frozen=True)
class Record:
    base_name: str | None = None
    base_time: float | None = None
    name: str | None = None
    unit: str | None = None
    value: float | None = None
    time: float | None = None

    def items(self) -> list[tuple[str, object]]:
        pairs = zip(KEY_ORDER, (self.base_name, self.base_time, self.name,
                                self.unit, self.value, self.time))
        return [(k, v) for k, v in pairs if v is not None]


@dataclass(frozen=True)
class Message:
    dialect: str
    records: tuple[Record, ...]
    raw_bytes: bytes | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        _validate(self)


@dataclass(frozen=True)
class GroundTruthPair:
    m_a: Message
    m_b: Message
    alignment_id: str


@dataclass(frozen=True)
class CoObservation:
    """A message together with the other system's decoded readings (K) at the same time.

    ``readings`` is keyed by the other system's sensor symbols.
    """

    message: Message
    time: float
    readings: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DialectSchema:
    """Learner-facing layout of a dialect.

    ``numeric`` names the slots of the numeric view; ``value_slot`` and
    ``time_slot`` index into it. ``name_predicate`` says which graph
    predicate carries the dialect's identifying symbol.
    """

    dialect: str
    numeric: tuple[str, ...]
    value_slot: int
    time_slot: int
    temperature_unit: str
    name_predicate: str
    epoch: float = 0.0

    def with_epoch(self, epoch: float) -> "DialectSchema":
        return DialectSchema(self.dialect, self.numeric, self.value_slot, self.time_slot,
                             self.temperature_unit, self.name_predicate, float(epoch))

    @property
    def key_slots(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.numeric))
                     if i not in (self.value_slot, self.time_slot))


SAMPLE_EPOCH = 1549359472.0
SCHEMA_A = DialectSchema("A", ("lon", "lat", "value", "time"), 2, 3, "K", "hasServiceUri",
                         SAMPLE_EPOCH)
SCHEMA_B = DialectSchema("B", ("value", "time"), 0, 1, "Cel", "hasName", SAMPLE_EPOCH)


def schema_for(dialect: str, epoch: float | None = None) -> DialectSchema:
    schema = {"A": SCHEMA_A, "B": SCHEMA_B}[dialect]
    return schema if epoch is None else schema.with_epoch(epoch)


def _finite(x: float | None) -> bool:
    return x is None or math.isfinite(x)


def _validate(m: Message) -> None:
    if m.dialect not in DIALECT_KEYS:
        raise MissingFieldError(f"unknown dialect {m.dialect!r}")
    allowed = DIALECT_KEYS[m.dialect]
    if not m.records:
        raise MissingFieldError("message has no records")
    for rec in m.records:
        for key, val in rec.items():
            if key not in allowed:
                raise UnknownKeyError(f"key {key!r} not allowed in dialect {m.dialect}")
            if key in _NUMBER_KEYS and not math.isfinite(val):
                raise MalformedMessageError(f"non-finite number for {key!r}")
            if key in _STRING_KEYS:
                try:
                    val.encode("utf-8")
                except UnicodeEncodeError as exc:
                    raise MalformedMessageError(f"{key!r} is not valid UTF-8") from exc
        if rec.unit is not None and rec.unit not in UNITS:
            raise UnitError(f"unit {rec.unit!r} not in registry")
        if rec.value is None and rec.base_name is None:
            raise MissingFieldError("record needs a value or a base name")
    if m.dialect == "A":
        head, *rest = m.records
        if head.base_name is None or head.base_time is None or head.value is not None \
                or head.unit is not None:
            raise MissingFieldError("dialect A starts with a {bn, bt} record")
        units = []
        for rec in rest:
            if rec.base_name is not None or rec.base_time is not None:
                raise MissingFieldError("only the first dialect A record may carry bn/bt")
            if rec.unit is None or rec.value is None:
                raise MissingFieldError("dialect A measurement records need u and v")
            units.append(rec.unit)
        if sorted(units) != sorted(["lon", "lat", SCHEMA_A.temperature_unit]):
            raise MissingFieldError(
                f"dialect A needs exactly one lon, lat and {SCHEMA_A.temperature_unit} record")
    else:
        for rec in m.records:
            if None in (rec.name, rec.unit, rec.value, rec.time):
                raise MissingFieldError("dialect B records need n, u, v and t")
            if rec.unit != SCHEMA_B.temperature_unit:
                raise MissingFieldError(
                    f"dialect B unit must be {SCHEMA_B.temperature_unit!r}, got {rec.unit!r}")


def _reject_constant(name: str):
    raise MalformedMessageError(f"non-finite literal {name}")


def parse(data: bytes | str, dialect: str) -> Message:
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedMessageError(f"not UTF-8: {exc}") from exc
    else:
        text = data
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise MalformedMessageError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, list) or not all(isinstance(r, dict) for r in doc):
        raise MalformedMessageError("message must be a JSON array of objects")
    records = []
    for obj in doc:
        fields = {}
        for key, val in obj.items():
            if key not in KEY_ORDER:
                raise UnknownKeyError(f"unknown key {key!r}")
            if key in _STRING_KEYS:
                if not isinstance(val, str):
                    raise MalformedMessageError(f"{key!r} must be a string")
            elif isinstance(val, bool) or not isinstance(val, (int, float)):
                raise MalformedMessageError(f"{key!r} must be a number")
            else:
                val = float(val)
            fields[key] = val
        records.append(Record(
            base_name=fields.get("bn"), base_time=fields.get("bt"), name=fields.get("n"),
            unit=fields.get("u"), value=fields.get("v"), time=fields.get("t"),
        ))
    raw = data if isinstance(data, bytes) else data.encode("utf-8")
    return Message(dialect, tuple(records), raw_bytes=raw)


def format_number(x: float) -> str:
    """Shortest round-tripping decimal; integral values drop the ``.0``."""
    s = repr(float(x))
    if s.endswith(".0") and not (x == 0 and math.copysign(1.0, x) < 0):
        s = s[:-2]
    return s


def serialize(m: Message) -> bytes:
    parts = []
    for rec in m.records:
        body = ",".join(
            f'"{k}":' + (json.dumps(v, ensure_ascii=False) if k in _STRING_KEYS
                         else format_number(v))
            for k, v in rec.items())
        parts.append("{" + body + "}")
    return ("[" + ",".join(parts) + "]").encode("utf-8")


def message_time(m: Message) -> float:
    return m.records[0].base_time if m.dialect == "A" else m.records[0].time


def _symbols(m: Message) -> list[str]:
    if m.dialect == "A":
        by_unit = {r.unit: r for r in m.records[1:]}
        return [m.records[0].base_name, "lon", "lat", by_unit[SCHEMA_A.temperature_unit].unit]
    rec = m.records[0]
    return [rec.name, rec.unit]


def numeric_view(m: Message, schema: DialectSchema) -> tuple[np.ndarray, list[str]]:
    """Numeric slots in schema order plus the message's symbols.

    Time enters as an offset from ``schema.epoch``.
    """
    if m.dialect != schema.dialect:
        raise SchemaMismatchError(
            f"dialect {m.dialect} message does not match schema {schema.dialect}")
    if m.dialect == "A":
        by_unit = {r.unit: r.value for r in m.records[1:]}
        vec = [by_unit["lon"], by_unit["lat"], by_unit[schema.temperature_unit],
               m.records[0].base_time - schema.epoch]
    else:
        if len(m.records) != 1:
            raise SchemaMismatchError("dialect B schema expects a single record")
        rec = m.records[0]
        vec = [rec.value, rec.time - schema.epoch]
    return np.array(vec, dtype=float), _symbols(m)


def message_a(base_name: str, time: float, lon: float, lat: float, value: float,
              unit: str = "K") -> Message:
    return Message("A", (Record(base_name=base_name, base_time=float(time)),
                         Record(unit="lon", value=float(lon)),
                         Record(unit="lat", value=float(lat)),
                         Record(unit=unit, value=float(value))))


def message_b(name: str, value: float, time: float, unit: str = "Cel") -> Message:
    return Message("B", (Record(name=name, unit=unit, value=float(value), time=float(time)),))


def read_ndjson(lines: Iterable[str] | str, dialect: str) -> list[Message]:
    if isinstance(lines, str):
        lines = lines.splitlines()
    return [parse(line, dialect) for line in lines if line.strip()]


def write_ndjson(messages: Sequence[Message]) -> str:
    return "".join(serialize(m).decode("utf-8") + "\n" for m in messages)


def pair_to_json(pair: GroundTruthPair) -> str:
    return ('{"a":' + serialize(pair.m_a).decode("utf-8")
            + ',"b":' + serialize(pair.m_b).decode("utf-8")
            + ',"id":' + json.dumps(pair.alignment_id, ensure_ascii=False) + "}")


def pair_from_json(line: str) -> GroundTruthPair:
    try:
        doc = json.loads(line)
        return GroundTruthPair(
            parse(json.dumps(doc["a"], ensure_ascii=False), "A"),
            parse(json.dumps(doc["b"], ensure_ascii=False), "B"),
            str(doc["id"]),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise MalformedMessageError(f"invalid pair line: {exc}") from exc


def coobs_to_json(c: CoObservation) -> str:
    readings = ",".join(json.dumps(k, ensure_ascii=False) + ":" + format_number(v)
                        for k, v in sorted(c.readings.items()))
    return ('{"dialect":' + json.dumps(c.message.dialect) + ',"t":' + format_number(c.time)
            + ',"m":' + serialize(c.message).decode("utf-8")
            + ',"readings":{' + readings + "}}")


def coobs_from_json(line: str) -> CoObservation:
    try:
        doc = json.loads(line)
        m = parse(json.dumps(doc["m"], ensure_ascii=False), doc["dialect"])
        readings = {str(k): float(v) for k, v in doc["readings"].items()}
        return CoObservation(m, float(doc["t"]), readings)
    except CodecError:
        raise
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise MalformedMessageError(f"malformed co-observation line: {exc}") from exc
