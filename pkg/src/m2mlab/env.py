"""Shared physical environment: a linear discrete-time thermal model of offices.

The plant evolves as

    x[k+1] = A x[k] + B u[k] + E (t_out[k] - t_ref) + w[k]
    y[k+1] = C x[k+1] + v[k+1]

with Gaussian process noise ``w`` and sensor noise ``v``. Noise for step ``k``
is drawn from a counter-based generator keyed by ``(seed, k)`` so trajectories
do not depend on how callers interleave steps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ConfigurationError",
    "InputError",
    "EnvModel",
    "EnvState",
    "canonical_model",
    "model_from_dict",
    "model_to_dict",
    "load_model",
    "env_reset",
    "env_step",
    "draw_noise",
    "equilibrium",
    "write_trajectory_csv",
    "trajectory_header",
]


class ConfigurationError(ValueError):
    """Raised when a plant model violates its structural invariants."""


class InputError(ValueError):
    """Raised when an actuation vector is malformed or non-finite."""


def _as_matrix(name: str, value, shape: tuple[int, int] | None = None) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 1 and shape is not None and shape[1] == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if shape is not None and arr.shape != shape:
        raise ConfigurationError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EnvModel:
    """Immutable plant description.

    Attributes:
        n_states: number of offices (state dimension ``n``).
        dt: seconds per step.
        A: ``n x n`` state transition matrix.
        B: ``n x m`` input matrix, kelvin per unit input per step.
        E: ``n x 1`` outdoor-temperature gain.
        C: ``p x n`` output matrix.
        process_noise_std: kelvin.
        sensor_noise_std: kelvin.
        t_out: per-step outdoor temperature in kelvin; the last value is held.
        t_ref: reference subtracted from ``t_out`` before applying ``E``.
    """

    n_states: int
    dt: float
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray
    process_noise_std: float = 0.0
    sensor_noise_std: float = 0.0
    t_out: np.ndarray = field(default_factory=lambda: np.array([263.15]))
    t_ref: float = 0.0

    def __post_init__(self) -> None:
        n = self.n_states
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise ConfigurationError("n_states must be a positive integer")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError("dt must be positive")
        A = _as_matrix("A", self.A, (n, n))
        B = _as_matrix("B", self.B)
        if B.shape[0] != n:
            raise ConfigurationError(f"B has {B.shape[0]} rows, expected {n}")
        E = _as_matrix("E", self.E, (n, 1))
        C = _as_matrix("C", self.C)
        if C.shape[1] != n:
            raise ConfigurationError(f"C has {C.shape[1]} columns, expected {n}")
        if self.process_noise_std < 0 or self.sensor_noise_std < 0:
            raise ConfigurationError("noise standard deviations must be >= 0")
        t_out = np.atleast_1d(np.array(self.t_out, dtype=float))
        if t_out.ndim != 1 or t_out.size == 0 or not np.all(np.isfinite(t_out)):
            raise ConfigurationError("t_out must be a non-empty finite trajectory")
        t_out.setflags(write=False)
        rho = max(abs(np.linalg.eigvals(A)))
        if not rho < 1.0:
            raise ConfigurationError(f"spectral radius of A is {rho:.6g}; plant must be stable")
        for name, value in (("A", A), ("B", B), ("E", E), ("C", C), ("t_out", t_out)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "n_states", int(n))

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def outdoor(self, k: int) -> float:
        return float(self.t_out[min(k, self.t_out.size - 1)])

    def with_noise(self, process: float, sensor: float) -> "EnvModel":
        return EnvModel(self.n_states, self.dt, self.A, self.B, self.E, self.C,
                        process, sensor, self.t_out, self.t_ref)


@dataclass(frozen=True, eq=False)
class EnvState:
    x_env: np.ndarray
    k: int
    rng_seed: int

    def __eq__(self, other) -> bool:
        if not isinstance(other, EnvState):
            return NotImplemented
        return (self.k == other.k and self.rng_seed == other.rng_seed
                and np.array_equal(self.x_env, other.x_env))


def canonical_model(
    n_offices: int = 4,
    dt: float = 60.0,
    leak: float = 0.05,
    coupling: float = 0.01,
    heater_gain: float = 0.5,
    vent_gain: float = -0.4,
    process_noise_std: float = 0.05,
    sensor_noise_std: float = 0.1,
    t_out: float | Sequence[float] = 263.15,
) -> EnvModel:
    """Row of offices with nearest-neighbour coupling.

    Each row of ``A`` sums to ``1 - leak``; the lost fraction couples to the
    outdoor temperature through ``E``, so with ``u = 0`` and constant weather
    every office settles at ``t_out``. Inputs ``0..n-1`` are heaters, inputs
    ``n..2n-1`` are ventilation; outputs stack two co-located sensor sets.
    """
    n = n_offices
    A = np.zeros((n, n))
    for i in range(n):
        for j in (i - 1, i + 1):
            if 0 <= j < n:
                A[i, j] = coupling
        A[i, i] = (1.0 - leak) - A[i].sum()
    B = np.hstack([heater_gain * np.eye(n), vent_gain * np.eye(n)])
    E = (np.eye(n) - A) @ np.ones((n, 1))
    C = np.vstack([np.eye(n), np.eye(n)])
    return EnvModel(n, dt, A, B, E, C, process_noise_std, sensor_noise_std,
                    np.atleast_1d(np.array(t_out, dtype=float)))


def _t_out_from_json(value, default_steps: int | None = None) -> np.ndarray:
    # scalar | list of per-step values | {"breaks": [[k, value], ...], "steps": n}
    if isinstance(value, (int, float)):
        return np.array([float(value)])
    if isinstance(value, list):
        return np.array(value, dtype=float)
    if isinstance(value, dict) and "breaks" in value:
        breaks = sorted((int(k), float(v)) for k, v in value["breaks"])
        if not breaks or breaks[0][0] != 0:
            raise ConfigurationError("t_out breaks must start at k = 0")
        steps = int(value.get("steps", default_steps or breaks[-1][0] + 1))
        out = np.empty(max(steps, breaks[-1][0] + 1))
        for (k0, v), nxt in zip(breaks, breaks[1:] + [(out.size, None)]):
            out[k0:nxt[0]] = v
        return out
    raise ConfigurationError(f"unsupported t_out specification: {value!r}")


def model_from_dict(doc: dict) -> EnvModel:
    """Build a model from its JSON form.

    Either ``{"preset": "canonical", ...overrides}`` where overrides are
    keyword arguments of :func:`canonical_model`, or an explicit document
    with ``n_states, dt, A, B, E, C`` and optional noise/``t_out``/``t_ref``.
    """
    doc = dict(doc)
    try:
        if doc.pop("preset", None) == "canonical":
            if "t_out" in doc:
                doc["t_out"] = _t_out_from_json(doc["t_out"])
            return canonical_model(**doc)
        return EnvModel(
            n_states=int(doc["n_states"]),
            dt=float(doc["dt"]),
            A=doc["A"], B=doc["B"], E=doc["E"], C=doc["C"],
            process_noise_std=float(doc.get("process_noise_std", 0.0)),
            sensor_noise_std=float(doc.get("sensor_noise_std", 0.0)),
            t_out=_t_out_from_json(doc.get("t_out", 263.15)),
            t_ref=float(doc.get("t_ref", 0.0)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"invalid plant document: {exc}") from exc


def model_to_dict(model: EnvModel) -> dict:
    return {
        "n_states": model.n_states,
        "dt": model.dt,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "E": model.E.tolist(),
        "C": model.C.tolist(),
        "process_noise_std": model.process_noise_std,
        "sensor_noise_std": model.sensor_noise_std,
        "t_out": model.t_out.tolist(),
        "t_ref": model.t_ref,
    }


def load_model(path: str | Path) -> EnvModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def env_reset(model: EnvModel, seed: int) -> EnvState:
    x0 = np.full(model.n_states, model.outdoor(0))
    x0.setflags(write=False)
    return EnvState(x_env=x0, k=0, rng_seed=int(seed))


def draw_noise(model: EnvModel, seed: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Process and sensor noise used on the transition out of step ``k``."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, k], dtype=np.uint64)))
    z = gen.standard_normal(model.n_states + model.n_outputs)
    return (model.process_noise_std * z[: model.n_states],
            model.sensor_noise_std * z[model.n_states:])


def env_step(state: EnvState, model: EnvModel, u) -> tuple[EnvState, np.ndarray]:
    u = np.asarray(u, dtype=float)
    if u.shape != (model.n_inputs,):
        raise InputError(f"u must have length {model.n_inputs}, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise InputError("u contains non-finite entries")
    d = model.outdoor(state.k) - model.t_ref
    x = model.A @ state.x_env + model.B @ u + model.E[:, 0] * d
    if model.process_noise_std > 0 or model.sensor_noise_std > 0:
        w, v = draw_noise(model, state.rng_seed, state.k)
        x = x + w
        y = model.C @ x + v
    else:
        y = model.C @ x
    x.setflags(write=False)
    return EnvState(x_env=x, k=state.k + 1, rng_seed=state.rng_seed), y


def equilibrium(model: EnvModel, u=None, d: float | None = None) -> np.ndarray:
    """Noise-free fixed point ``(I - A)^-1 (B u + E d)``."""
    u = np.zeros(model.n_inputs) if u is None else np.asarray(u, dtype=float)
    d = model.outdoor(0) - model.t_ref if d is None else d
    rhs = model.B @ u + model.E[:, 0] * d
    return np.linalg.solve(np.eye(model.n_states) - model.A, rhs)


def trajectory_header(model: EnvModel) -> list[str]:
    return (["k", "t_seconds"]
            + [f"x_{i + 1}" for i in range(model.n_states)]
            + [f"u_{i + 1}" for i in range(model.n_inputs)]
            + [f"y_{i + 1}" for i in range(model.n_outputs)])


def write_trajectory_csv(
    path: str | Path,
    model: EnvModel,
    rows: Iterable[tuple[int, np.ndarray, np.ndarray, np.ndarray]],
) -> None:
    """Write ``(k, x, u, y)`` rows; ``u`` is the input applied into step ``k``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trajectory_header(model))
        for k, x, u, y in rows:
            writer.writerow([k, repr(float(k * model.dt))]
                            + [repr(float(v)) for v in x]
                            + [repr(float(v)) for v in u]
                            + [repr(float(v)) for v in y])
