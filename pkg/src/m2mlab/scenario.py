"""Scenario documents: plant, the two CPS, their graphs, probes and faults.

A scenario is a JSON document; :func:`canonical_scenario_doc` builds the
office scenario used throughout the experiments and the files under
``scenarios/`` are dumps of it (or small variations).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .codec import SAMPLE_EPOCH
from .cps import CpsConfig, HAS_LAT, HAS_LON, HAS_NAME, HAS_SERVICE, LOCATED_IN
from .env import ConfigurationError, EnvModel, model_from_dict
from .semgraph import SemanticGraph, Triple

__all__ = [
    "Probe",
    "Fault",
    "Scenario",
    "OFFICES",
    "COORDINATES",
    "EVAL_LOCATED_IN",
    "canonical_graph_triples",
    "canonical_scenario_doc",
    "canonical_scenario",
    "BUILTIN_SCENARIOS",
    "builtin_scenario_doc",
    "load_scenario",
    "scenario_hash",
]

OFFICES = ("office-A2312", "office-A2313", "office-A2314", "office-A2315")
COORDINATES = ((65.61721, 22.13683), (65.61727, 22.13699),
               (65.61718, 22.13712), (65.61735, 22.13676))
SERVICE_URI = "127.0.0.1/temp-service"
EVAL_LOCATED_IN = "eval:locatedIn"
RDF_TYPE = "rdf:type"


def _t(s, p, o, lit=False):
    return [s, p, o, lit]


def canonical_graph_triples(n_offices: int = 4) -> dict[str, list[list]]:
    """Triples of the A graph, the B graph and the evaluation-only alignment graph."""
    ga, gb, ev = [], [], []
    ga += [_t("lon", RDF_TYPE, "CoordinateUnit"), _t("lat", RDF_TYPE, "CoordinateUnit"),
           _t("K", RDF_TYPE, "TemperatureUnit")]
    gb += [_t("Cel", RDF_TYPE, "TemperatureUnit")]
    for i in range(n_offices):
        sa, sb, office = f"tempA{i + 1}", f"tempB{i + 1}", OFFICES[i]
        lon, lat = COORDINATES[i]
        name = f"{office}-temp-sensor"
        ga += [_t(sa, RDF_TYPE, "TemperatureSensor"),
               _t(sa, HAS_SERVICE, SERVICE_URI, True),
               _t(sa, HAS_LON, repr(lon), True),
               _t(sa, HAS_LAT, repr(lat), True),
               _t(sa, "hasUnit", "K"),
               _t(sa, LOCATED_IN, f"hvac-zone-{i + 1}")]
        gb += [_t(sb, RDF_TYPE, "TemperatureSensor"),
               _t(sb, HAS_NAME, name, True),
               _t(sb, "hasUnit", "Cel"),
               _t(sb, LOCATED_IN, office),
               _t(office, RDF_TYPE, "Office")]
        ev += [_t(sa, EVAL_LOCATED_IN, office), _t(sb, EVAL_LOCATED_IN, office)]
    return {"A": ga, "B": gb, "eval": ev}


def canonical_scenario_doc(**overrides) -> dict:
    doc = {
        "name": "office",
        "seed": 7,
        "steps": 480,
        "epoch": SAMPLE_EPOCH,
        "plant": {"preset": "canonical"},
        "cps": {
            "A": {"sensors": ["tempA1", "tempA2", "tempA3", "tempA4"],
                  "sensor_rows": [0, 1, 2, 3], "actuator_cols": [0, 1, 2, 3],
                  "control_gain": 0.5, "setpoint": 268.15},
            "B": {"sensors": ["tempB1", "tempB2", "tempB3", "tempB4"],
                  "sensor_rows": [4, 5, 6, 7], "actuator_cols": [4, 5, 6, 7],
                  "control_gain": -0.5, "setpoint": 266.15},
        },
        "graphs": canonical_graph_triples(),
        "probes": [{"k": 60 + 90 * i, "cps": "A", "office": i, "delta": 2.0} for i in range(4)],
        "faults": [],
        "translator": "none",
        "loss": {"lambda": 1.0},
        "training": {
            "pairs": {"n_train": 200, "n_heldout": 50, "burn_in": 20, "seed": 5},
            "e2e": {"hidden": [32], "lr": 0.02, "momentum": 0.9, "batch_size": 20,
                    "epochs": 400, "symbol_weight": 1.0, "init_scale": 1.0, "seed": 11},
            "ae": {"latent_dim": 4, "activation": "linear", "hidden": [], "lr": 0.02,
                   "momentum": 0.9, "batch_size": 64, "epochs": 150, "seed": 13},
            "ae_heldout": 0.2,
            "latent": {"hidden": [16], "activation": "tanh", "lr": 0.05, "momentum": 0.9,
                       "batch_size": None, "epochs": 1500, "symbol_weight": 1.0,
                       "loss": "correlation", "seed": 17},
            "latent_reverse": {"hidden": [16], "activation": "tanh", "lr": 0.01,
                               "momentum": 0.9, "batch_size": None, "epochs": 1500,
                               "symbol_weight": 1.0, "loss": "correlation", "seed": 19},
            "latent_linear": {"hidden": [], "activation": "linear", "lr": 0.1, "momentum": 0.9,
                              "batch_size": None, "epochs": 3000, "symbol_weight": 1.0,
                              "loss": "correlation", "seed": 23},
            "causation": {"hidden": [], "activation": "linear", "loss": "causation",
                          "spsa_iterations": 20, "spsa_a": 0.1, "spsa_c": 0.05, "seed": 29},
            "gradcheck": {"samples": 8, "step": 1e-5, "tolerance": 1e-4, "seed": 31},
        },
    }
    for key, val in overrides.items():
        doc[key] = val
    return doc


@dataclass(frozen=True)
class Probe:
    k: int
    cps: str
    office: int
    delta: float


@dataclass(frozen=True)
class Fault:
    """Sensor fault: ``stuck`` replaces the reading, ``bias`` adds to it."""

    cps: str
    sensor: int
    mode: str
    value: float
    start: int = 0


@dataclass(eq=False)
class Scenario:
    name: str
    model: EnvModel
    cps_a: CpsConfig
    cps_b: CpsConfig
    graph_a: SemanticGraph
    graph_b: SemanticGraph
    eval_graph: SemanticGraph
    steps: int
    seed: int
    epoch: float = SAMPLE_EPOCH
    probes: tuple[Probe, ...] = ()
    faults: tuple[Fault, ...] = ()
    translator: str = "none"
    loss_lambda: float = 1.0
    training: dict = field(default_factory=dict)
    doc: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigurationError("episode length must be >= 1")
        for p in self.probes:
            if not 0 <= p.k < self.steps:
                raise ConfigurationError(f"probe at k={p.k} outside episode")
        for cfg in (self.cps_a, self.cps_b):
            if max(cfg.sensor_rows) >= self.model.n_outputs:
                raise IndexError(f"CPS {cfg.domain} sensor row out of range")
            if max(cfg.actuator_cols) >= self.model.n_inputs:
                raise IndexError(f"CPS {cfg.domain} actuator column out of range")
        if set(self.cps_a.actuator_cols) & set(self.cps_b.actuator_cols):
            raise ConfigurationError("actuator ownership must be disjoint")
        if set(self.cps_a.sensor_rows) & set(self.cps_b.sensor_rows):
            raise ConfigurationError("sensor ownership must be disjoint")

    @property
    def dt(self) -> float:
        return self.model.dt

    def cps(self, domain: str) -> CpsConfig:
        return self.cps_a if domain == "A" else self.cps_b

    def graph(self, domain: str) -> SemanticGraph:
        return self.graph_a if domain == "A" else self.graph_b

    def variant(self, **overrides) -> "Scenario":
        doc = copy.deepcopy(self.doc)
        for key, val in overrides.items():
            doc[key] = val
        return Scenario.from_dict(doc)

    @property
    def has_probes(self) -> bool:
        return bool(self.probes)

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        doc = copy.deepcopy(doc)
        try:
            model = model_from_dict(doc["plant"])
            graphs = {}
            for key, gid in (("A", "A"), ("B", "B"), ("eval", "eval")):
                spec = doc["graphs"][key]
                if isinstance(spec, str):
                    graphs[key] = SemanticGraph.load(spec, gid)
                else:
                    graphs[key] = SemanticGraph(gid, [Triple(*t) for t in spec])
            graphs["eval"] = graphs["A"].union(graphs["B"]).union(graphs["eval"], "eval")

            def cps_cfg(domain):
                c = doc["cps"][domain]
                return CpsConfig(domain, tuple(c["sensors"]), tuple(c["sensor_rows"]),
                                 tuple(c["actuator_cols"]), graphs[domain],
                                 c["control_gain"], c["setpoint"],
                                 float(c.get("resolution", 1e-6)))

            return cls(
                name=str(doc.get("name", "scenario")),
                model=model,
                cps_a=cps_cfg("A"),
                cps_b=cps_cfg("B"),
                graph_a=graphs["A"],
                graph_b=graphs["B"],
                eval_graph=graphs["eval"],
                steps=int(doc["steps"]),
                seed=int(doc["seed"]),
                epoch=float(doc.get("epoch", SAMPLE_EPOCH)),
                probes=tuple(Probe(int(p["k"]), p["cps"], int(p["office"]), float(p["delta"]))
                             for p in doc.get("probes", [])),
                faults=tuple(Fault(f["cps"], int(f["sensor"]), f["mode"], float(f["value"]),
                                   int(f.get("start", 0)))
                             for f in doc.get("faults", [])),
                translator=str(doc.get("translator", "none")),
                loss_lambda=float(doc.get("loss", {}).get("lambda", 1.0)),
                training=doc.get("training", {}),
                doc=doc,
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"invalid scenario document: missing or bad {exc}") from exc


def canonical_scenario(**overrides) -> Scenario:
    return Scenario.from_dict(canonical_scenario_doc(**overrides))


def _noisefree_doc() -> dict:
    return canonical_scenario_doc(
        name="office_noisefree",
        plant={"preset": "canonical", "process_noise_std": 0.0, "sensor_noise_std": 0.0})


def _fault_doc() -> dict:
    # CPS B's own sensor in the second office reads a constant 10 Cel
    return canonical_scenario_doc(
        name="office_fault",
        faults=[{"cps": "B", "sensor": 1, "mode": "stuck", "value": 283.15, "start": 0}])


BUILTIN_SCENARIOS = {
    "office": canonical_scenario_doc,
    "office_noisefree": _noisefree_doc,
    "office_fault": _fault_doc,
}


def builtin_scenario_doc(name: str) -> dict:
    try:
        return BUILTIN_SCENARIOS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown built-in scenario {name!r}") from None


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file; a bare built-in name (``office``, ``office.json``) also works."""
    path = Path(path)
    if not path.exists():
        name = path.name[:-5] if path.name.endswith(".json") else path.name
        if path.parent == Path(".") and name in BUILTIN_SCENARIOS:
            return Scenario.from_dict(builtin_scenario_doc(name))
        raise ConfigurationError(f"scenario file {str(path)!r} not found")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read scenario {str(path)!r}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("scenario document must be a JSON object")
    return Scenario.from_dict(doc)


def scenario_hash(s: Scenario) -> str:
    blob = json.dumps(s.doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
