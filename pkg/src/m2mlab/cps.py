"""One cyber-physical system: sensing, matched encoder/decoder, control law.

Both CPS keep temperatures in kelvin internally; dialect units only appear in
messages. Readings are quantized to ``resolution`` at the sensing boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import Message, message_a, message_b, from_kelvin, to_kelvin
from .semgraph import SemanticGraph

__all__ = [
    "CpsError",
    "IncompatibilityError",
    "MetadataError",
    "CpsConfig",
    "CpsState",
    "init_state",
    "sense",
    "encode",
    "encode_all",
    "read_message",
    "decode",
    "control",
    "blended",
]

LOCATED_IN = "locatedIn"
HAS_NAME = "hasName"
HAS_SERVICE = "hasServiceUri"
HAS_LON = "hasLongitude"
HAS_LAT = "hasLatitude"


class CpsError(Exception):
    pass


class IncompatibilityError(CpsError):
    """A message of the other dialect reached this decoder."""


class MetadataError(CpsError):
    """Graph metadata needed to encode or decode is missing."""


@dataclass(frozen=True, eq=False)
class CpsConfig:
    """Static description of one CPS.

    ``sensors[i]`` is the graph symbol of the sensor read from
    ``y[sensor_rows[i]]``; ``actuator_cols[i]`` is the actuator acting on the
    same office. A negative ``control_gain`` gives a cooling actuator.
    """

    domain: str
    sensors: tuple[str, ...]
    sensor_rows: tuple[int, ...]
    actuator_cols: tuple[int, ...]
    graph: SemanticGraph
    control_gain: tuple[float, ...]
    setpoint: tuple[float, ...]
    resolution: float = 1e-6

    def __post_init__(self) -> None:
        n = len(self.sensors)
        for name in ("sensor_rows", "actuator_cols", "control_gain", "setpoint"):
            val = getattr(self, name)
            if isinstance(val, (int, float)):
                val = (val,) * n
            object.__setattr__(self, name, tuple(val))
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per sensor ({n})")
        object.__setattr__(self, "sensors", tuple(self.sensors))
        if self.domain not in ("A", "B"):
            raise ValueError(f"domain must be 'A' or 'B', got {self.domain!r}")
        if any(r < 0 for r in self.sensor_rows) or any(c < 0 for c in self.actuator_cols):
            raise IndexError("sensor and actuator indices must be non-negative")

    def label(self, i: int) -> str:
        sensor = self.sensors[i]
        return self.graph.value(sensor, LOCATED_IN) or sensor

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.label(i) for i in range(len(self.sensors)))


@dataclass(frozen=True, eq=False)
class CpsState:
    x_cps: dict[str, float]
    u_local: np.ndarray
    y_local: np.ndarray
    sensed: bool = False

    def snapshot(self) -> dict[str, float]:
        return dict(self.x_cps)


def init_state(cfg: CpsConfig) -> CpsState:
    x: dict[str, float] = {"clock": math.nan}
    for i, lab in enumerate(cfg.labels):
        x[f"own.{lab}"] = math.nan
        x[f"remote.{lab}"] = math.nan
        x[f"blend.{lab}"] = math.nan
        x[f"setpoint.{lab}"] = float(cfg.setpoint[i])
    n = len(cfg.sensors)
    return CpsState(x, np.zeros(len(cfg.actuator_cols)), np.full(n, math.nan))


def sense(cps: CpsState, cfg: CpsConfig, y, time: float | None = None) -> CpsState:
    y = np.asarray(y, dtype=float)
    if max(cfg.sensor_rows, default=-1) >= y.size:
        raise IndexError(f"sensor row {max(cfg.sensor_rows)} out of range for {y.size} outputs")
    digits = -int(round(math.log10(cfg.resolution))) if cfg.resolution > 0 else None
    raw = y[list(cfg.sensor_rows)]
    y_local = np.array([round(float(v), digits) for v in raw]) if digits is not None else raw.copy()
    x = dict(cps.x_cps)
    for lab, v in zip(cfg.labels, y_local):
        x[f"own.{lab}"] = float(v)
    if time is not None:
        x["clock"] = float(time)
    return replace(cps, x_cps=x, y_local=y_local, sensed=True)


def _literal(graph: SemanticGraph, subject: str, predicate: str) -> str:
    val = graph.value(subject, predicate)
    if val is None:
        raise MetadataError(f"{subject!r} has no {predicate!r} in graph {graph.graph_id}")
    return val


def encode(cps: CpsState, cfg: CpsConfig, sensor: int = 0) -> Message:
    if not cps.sensed:
        raise CpsError("state has not been sensed yet")
    sym = cfg.sensors[sensor]
    reading = float(cps.y_local[sensor])
    t = cps.x_cps["clock"]
    if cfg.domain == "A":
        return message_a(
            _literal(cfg.graph, sym, HAS_SERVICE), t,
            float(_literal(cfg.graph, sym, HAS_LON)),
            float(_literal(cfg.graph, sym, HAS_LAT)),
            reading, "K")
    return message_b(_literal(cfg.graph, sym, HAS_NAME), from_kelvin(reading, "Cel"), t, "Cel")


def encode_all(cps: CpsState, cfg: CpsConfig) -> list[Message]:
    return [encode(cps, cfg, i) for i in range(len(cfg.sensors))]


def _resolve(cfg: CpsConfig, m: Message) -> tuple[int, float]:
    graph = cfg.graph
    if cfg.domain == "A":
        bn = m.records[0].base_name
        by_unit = {r.unit: r.value for r in m.records[1:]}
        if not graph.subjects(HAS_SERVICE, bn):
            raise MetadataError(f"service {bn!r} unknown to graph {graph.graph_id}")
        for i, sym in enumerate(cfg.sensors):
            lon, lat = graph.value(sym, HAS_LON), graph.value(sym, HAS_LAT)
            if lon is not None and lat is not None and float(lon) == by_unit["lon"] \
                    and float(lat) == by_unit["lat"]:
                return i, to_kelvin(by_unit["K"], "K")
        raise MetadataError(f"no sensor at lon={by_unit['lon']}, lat={by_unit['lat']}")
    rec = m.records[0]
    subjects = graph.subjects(HAS_NAME, rec.name)
    for i, sym in enumerate(cfg.sensors):
        if sym in subjects:
            return i, to_kelvin(rec.value, rec.unit)
    raise MetadataError(f"name {rec.name!r} does not resolve to an office in {graph.graph_id}")


def read_message(cfg: CpsConfig, m: Message) -> tuple[str, float]:
    """Office label and kelvin reading carried by a same-dialect message."""
    if m.dialect != cfg.domain:
        raise IncompatibilityError(
            f"CPS {cfg.domain} decoder cannot interpret a dialect {m.dialect} message")
    i, kelvin = _resolve(cfg, m)
    return cfg.label(i), kelvin


def decode(cps: CpsState, cfg: CpsConfig, m: Message) -> CpsState:
    label, kelvin = read_message(cfg, m)
    x = dict(cps.x_cps)
    x[f"remote.{label}"] = kelvin
    state = replace(cps, x_cps=x)
    return update_control(state, cfg)


def blended(cps: CpsState, cfg: CpsConfig) -> np.ndarray:
    out = np.empty(len(cfg.sensors))
    for i, lab in enumerate(cfg.labels):
        own, remote = cps.x_cps[f"own.{lab}"], cps.x_cps[f"remote.{lab}"]
        if math.isnan(remote):
            out[i] = own
        elif math.isnan(own):
            out[i] = remote
        else:
            out[i] = 0.5 * own + 0.5 * remote
    return out


def control(cps: CpsState, cfg: CpsConfig) -> np.ndarray:
    temps = blended(cps, cfg)
    u = np.zeros(len(cfg.actuator_cols))
    for i, lab in enumerate(cfg.labels):
        if math.isnan(temps[i]):
            continue
        err = cps.x_cps[f"setpoint.{lab}"] - temps[i]
        u[i] = min(max(cfg.control_gain[i] * err, 0.0), 1.0)
    return u


def update_control(cps: CpsState, cfg: CpsConfig) -> CpsState:
    temps = blended(cps, cfg)
    x = dict(cps.x_cps)
    for lab, v in zip(cfg.labels, temps):
        x[f"blend.{lab}"] = float(v)
    state = replace(cps, x_cps=x)
    return replace(state, u_local=control(state, cfg))


def set_setpoint(cps: CpsState, cfg: CpsConfig, office: int, value: float) -> CpsState:
    x = dict(cps.x_cps)
    x[f"setpoint.{cfg.label(office)}"] = float(value)
    return replace(cps, x_cps=x)
