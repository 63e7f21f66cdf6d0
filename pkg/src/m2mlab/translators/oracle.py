"""Engineered translator: field mapping, unit conversion and location lookup.

Locations are resolved through the evaluation-only alignment graph, which
records which office each sensor of either system is in.
"""

from __future__ import annotations

from ..codec import Message, message_a, message_b, from_kelvin, to_kelvin
from ..cps import HAS_LAT, HAS_LON, HAS_NAME, HAS_SERVICE
from ..scenario import EVAL_LOCATED_IN
from ..semgraph import SemanticGraph

__all__ = ["MissingDataError", "oracle_translate"]


class MissingDataError(LookupError):
    pass


def _office_of(graph: SemanticGraph, sensor: str) -> str:
    office = graph.value(sensor, EVAL_LOCATED_IN)
    if office is None:
        raise MissingDataError(f"sensor {sensor!r} has no alignment triple")
    return office


def _peer(graph: SemanticGraph, office: str, predicate: str) -> str:
    for sensor in graph.subjects(EVAL_LOCATED_IN, office):
        if graph.value(sensor, predicate) is not None:
            return sensor
    raise MissingDataError(f"office {office!r} has no sensor carrying {predicate!r}")


def _a_to_b(m: Message, graph: SemanticGraph) -> Message:
    by_unit = {r.unit: r.value for r in m.records[1:]}
    lon, lat = by_unit["lon"], by_unit["lat"]
    source = None
    for t in graph.by_predicate(HAS_LON):
        if float(t.object) == lon:
            lat_lit = graph.value(t.subject, HAS_LAT)
            if lat_lit is not None and float(lat_lit) == lat:
                source = t.subject
                break
    if source is None:
        raise MissingDataError(f"no aligned sensor at lon={lon}, lat={lat}")
    target = _peer(graph, _office_of(graph, source), HAS_NAME)
    celsius = from_kelvin(to_kelvin(by_unit["K"], "K"), "Cel")
    return message_b(graph.value(target, HAS_NAME), celsius, m.records[0].base_time)


def _b_to_a(m: Message, graph: SemanticGraph) -> list[Message]:
    out = []
    for rec in m.records:
        sources = graph.subjects(HAS_NAME, rec.name)
        if not sources:
            raise MissingDataError(f"name {rec.name!r} not in alignment graph")
        target = _peer(graph, _office_of(graph, sources[0]), HAS_LON)
        out.append(message_a(graph.value(target, HAS_SERVICE), rec.time,
                             float(graph.value(target, HAS_LON)),
                             float(graph.value(target, HAS_LAT)),
                             to_kelvin(rec.value, rec.unit), "K"))
    return out


def oracle_translate(m: Message, eval_graph: SemanticGraph) -> list[Message]:
    """Translate to the other dialect; returns a list to allow one-to-many mappings."""
    if m.dialect == "A":
        return [_a_to_b(m, eval_graph)]
    return _b_to_a(m, eval_graph)
