"""Training of end-to-end translators, per-dialect autoencoders and latent maps.

The objectives are exposed separately (``*_objective``) so the same code path
that trains a network is the one gradient-checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..codec import (SAMPLE_EPOCH, CoObservation, GroundTruthPair, Message, numeric_view,
                     schema_for)
from ..semgraph import SemanticGraph
from .base import (Autoencoder, EndToEndTranslator, LatentMapTranslator, OutputLayout,
                   _symbol_blocks)
from .features import FeatureScaler, encode_reading, featurize_all, symbol_vector
from .losses import LossSpec, loss_abstract, loss_causation
from .mlp import MlpMap
from .optim import Objective, TrainingError, gradient_descent, spsa

__all__ = [
    "E2EConfig",
    "AEConfig",
    "LatentConfig",
    "e2e_objective",
    "ae_objective",
    "latent_objective",
    "train_end_to_end",
    "train_autoencoder",
    "source_key",
    "ground_sources",
    "LatentData",
    "latent_training_set",
    "train_latent_map",
    "closed_form_latent_predictions",
]


class _Config:
    @classmethod
    def from_dict(cls, doc: dict | None):
        doc = dict(doc or {})
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        if "hidden" in doc:
            doc["hidden"] = tuple(int(h) for h in doc["hidden"])
        return cls(**doc)


@dataclass(frozen=True)
class E2EConfig(_Config):
    hidden: tuple[int, ...] = (32,)
    lr: float = 0.02
    momentum: float = 0.9
    batch_size: int | None = 20
    epochs: int = 400
    symbol_weight: float = 1.0
    init_scale: float = 1.0
    seed: int = 11


@dataclass(frozen=True)
class AEConfig(_Config):
    latent_dim: int = 4
    activation: str = "linear"
    hidden: tuple[int, ...] = ()
    lr: float = 0.02
    momentum: float = 0.9
    batch_size: int | None = 64
    epochs: int = 150
    seed: int = 13


@dataclass(frozen=True)
class LatentConfig(_Config):
    hidden: tuple[int, ...] = (16,)
    activation: str = "tanh"
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int | None = None
    epochs: int = 3000
    symbol_weight: float = 1.0
    loss: str = "correlation"
    spsa_iterations: int = 20
    spsa_a: float = 0.05
    spsa_c: float = 0.05
    seed: int = 17


def _check_finite(theta: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(theta)):
        raise TrainingError(f"{what} parameters are not finite")


# objectives


def e2e_objective(net: MlpMap, Z: np.ndarray, T: np.ndarray, col_weight: np.ndarray) -> Objective:
    """Weighted squared error between ``net(Z)`` and targets ``T``, summed per sample."""
    work = net.copy()

    def objective(theta, idx):
        work.set_params(theta)
        z, t = (Z, T) if idx is None else (Z[idx], T[idx])
        out, acts = work.forward(z)
        r = out - t
        n = len(z)
        loss = float(np.sum(col_weight * r * r) / n)
        grad, _ = work.backward(acts, 2.0 * col_weight * r / n)
        return loss, grad

    return objective


def ae_objective(encoder: MlpMap, decoder: MlpMap, Z: np.ndarray) -> Objective:
    """Per-sample summed reconstruction error over encoder and decoder parameters."""
    enc, dec = encoder.copy(), decoder.copy()
    k = enc.n_params

    def objective(theta, idx):
        enc.set_params(theta[:k])
        dec.set_params(theta[k:])
        z = Z if idx is None else Z[idx]
        h, acts_e = enc.forward(z)
        zh, acts_d = dec.forward(h)
        r = zh - z
        n = len(z)
        loss = float(np.sum(r * r) / n)
        g_dec, dh = dec.backward(acts_d, 2.0 * r / n)
        g_enc, _ = enc.backward(acts_e, dh)
        return loss, np.concatenate([g_enc, g_dec])

    return objective


def latent_objective(latent_map: MlpMap, decoder: MlpMap, H: np.ndarray, Zt: np.ndarray,
                     weights: np.ndarray) -> Objective:
    """Weighted error of ``decoder(map(H))`` against target features ``Zt``."""
    work = latent_map.copy()

    def objective(theta, idx):
        work.set_params(theta)
        h, zt = (H, Zt) if idx is None else (H[idx], Zt[idx])
        hh, acts_m = work.forward(h)
        zh, acts_d = decoder.forward(hh)
        r = zh - zt
        n = len(h)
        loss = float(np.sum(weights * r * r) / n)
        _, dhh = decoder.backward(acts_d, 2.0 * weights * r / n)
        grad, _ = work.backward(acts_m, dhh)
        return loss, grad

    return objective


# end-to-end


def e2e_training_arrays(pairs: Sequence[GroundTruthPair], g_a: SemanticGraph,
                        g_b: SemanticGraph, epoch: float, source: str = "A"):
    """Source features, output layout and targets for an end-to-end map."""
    target = "B" if source == "A" else "A"
    g_src, g_dst = (g_a, g_b) if source == "A" else (g_b, g_a)
    src = [p.m_a if source == "A" else p.m_b for p in pairs]
    dst = [p.m_b if source == "A" else p.m_a for p in pairs]
    s_schema, t_schema = schema_for(source, epoch), schema_for(target, epoch)
    X = featurize_all(src, s_schema, g_src)
    scaler = FeatureScaler.fit(X, len(s_schema.numeric))
    slots = tuple(i for i in range(len(t_schema.numeric)) if i != t_schema.time_slot)
    views = [numeric_view(m, t_schema) for m in dst]
    Y = np.vstack([v[0][list(slots)] for v in views])
    scale = Y.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    shift = np.where(np.array(slots) == t_schema.value_slot, 0.0, Y.mean(axis=0))
    layout = OutputLayout(slots, scale, shift, g_dst.dim)
    priors = np.vstack([_symbol_blocks(x, scaler.n_numeric, g_dst.dim).sum(axis=0) for x in X])
    names = np.vstack([symbol_vector(g_dst, v[1][0]) for v in views])
    T = np.hstack([(Y - shift) / scale, names - priors])
    return X, scaler, layout, T


def train_end_to_end(pairs: Sequence[GroundTruthPair], g_a: SemanticGraph, g_b: SemanticGraph,
                     cfg: E2EConfig | dict | None = None, *, net: MlpMap | None = None,
                     epoch: float = SAMPLE_EPOCH, source: str = "A") -> EndToEndTranslator:
    """Fit an end-to-end translator on aligned pairs by mini-batch gradient descent."""
    cfg = cfg if isinstance(cfg, E2EConfig) else E2EConfig.from_dict(cfg)
    if not pairs:
        raise ValueError("end-to-end training needs at least one pair")
    X, scaler, layout, T = e2e_training_arrays(pairs, g_a, g_b, epoch, source)
    Z = scaler.transform(X)
    rng = np.random.default_rng(cfg.seed)
    if net is None:
        net = MlpMap.init((Z.shape[1],) + cfg.hidden + (T.shape[1],), "tanh", rng,
                          scale=cfg.init_scale)
    elif net.n_in != Z.shape[1] or net.n_out != T.shape[1]:
        raise ValueError("network widths do not match the pair corpus")
    col_weight = np.concatenate([np.ones(len(layout.slots)),
                                 np.full(layout.dim, cfg.symbol_weight)])
    theta, curve = gradient_descent(
        e2e_objective(net, Z, T, col_weight), net.get_params(), n_samples=len(Z), lr=cfg.lr,
        epochs=cfg.epochs, momentum=cfg.momentum, batch_size=cfg.batch_size, rng=rng)
    _check_finite(theta, "end-to-end")
    trained = net.copy()
    trained.set_params(theta)
    meta = {"n_pairs": len(pairs), "seed": cfg.seed, "curve": curve,
            "final_loss": curve[-1] if curve else None}
    return EndToEndTranslator(trained, scaler, layout, source, "B" if source == "A" else "A",
                              epoch, meta)


# autoencoders


def train_autoencoder(corpus: Sequence[Message], graph: SemanticGraph,
                      cfg: AEConfig | dict | None = None,
                      *, epoch: float = SAMPLE_EPOCH) -> Autoencoder:
    cfg = cfg if isinstance(cfg, AEConfig) else AEConfig.from_dict(cfg)
    if not corpus:
        raise ValueError("autoencoder training needs at least one message")
    dialects = {m.dialect for m in corpus}
    if len(dialects) != 1:
        raise ValueError(f"autoencoder corpus mixes dialects {sorted(dialects)}")
    if cfg.latent_dim < 1:
        raise ValueError("latent dimension must be >= 1")
    domain = dialects.pop()
    schema = schema_for(domain, epoch)
    X = featurize_all(corpus, schema, graph)
    scaler = FeatureScaler.fit(X, len(schema.numeric))
    Z = scaler.transform(X)
    rng = np.random.default_rng(cfg.seed)
    d = Z.shape[1]
    enc = MlpMap.init((d,) + cfg.hidden + (cfg.latent_dim,), cfg.activation, rng)
    dec = MlpMap.init((cfg.latent_dim,) + tuple(reversed(cfg.hidden)) + (d,), cfg.activation, rng)
    theta0 = np.concatenate([enc.get_params(), dec.get_params()])
    theta, curve = gradient_descent(
        ae_objective(enc, dec, Z), theta0, n_samples=len(Z), lr=cfg.lr, epochs=cfg.epochs,
        momentum=cfg.momentum, batch_size=cfg.batch_size, rng=rng)
    _check_finite(theta, "autoencoder")
    ae = Autoencoder(domain, scaler, enc, dec, epoch, {"seed": cfg.seed, "curve": curve})
    ae.set_params(theta)
    ae.metadata["train_mse"] = ae.reconstruction_mse(Z)
    return ae


# grounding


def source_key(m: Message, schema) -> tuple:
    """Identity of the sensor that sent ``m``: its name plus identifying numeric slots."""
    x, symbols = numeric_view(m, schema)
    return (symbols[0],) + tuple(float(x[i]) for i in schema.key_slots)


def ground_sources(coobs: Sequence[CoObservation], schema) -> dict[tuple, str]:
    """Assign each source sensor to the co-observed sensor it explains best.

    The cost of a (source, candidate) pair is the fraction of the candidate's
    variance left unexplained by an affine fit on the source values at the
    shared times; assignment is one-to-one (Hungarian method).
    """
    series: dict[tuple, dict[float, float]] = {}
    others: dict[str, dict[float, float]] = {}
    for c in coobs:
        value = float(numeric_view(c.message, schema)[0][schema.value_slot])
        series.setdefault(source_key(c.message, schema), {})[c.time] = value
        for sensor, reading in c.readings.items():
            others.setdefault(sensor, {})[c.time] = reading
    keys, sensors = sorted(series), sorted(others)
    if not keys or not sensors:
        raise ValueError("co-observation log is empty")
    cost = np.ones((len(keys), len(sensors)))
    for i, key in enumerate(keys):
        for j, sensor in enumerate(sensors):
            times = sorted(set(series[key]) & set(others[sensor]))
            if len(times) < 3:
                continue
            a = np.array([series[key][t] for t in times])
            b = np.array([others[sensor][t] for t in times])
            var_b = b.var()
            if var_b <= 1e-18:
                continue
            design = np.column_stack([a, np.ones_like(a)])
            coef, *_ = np.linalg.lstsq(design, b, rcond=None)
            cost[i, j] = float(np.mean((b - design @ coef) ** 2) / var_b)
    rows, cols = linear_sum_assignment(cost)
    return {keys[r]: sensors[c] for r, c in zip(rows, cols)}


# latent map


@dataclass
class LatentData:
    H: np.ndarray
    Zt: np.ndarray
    weights: np.ndarray
    grounding: dict = field(default_factory=dict)


def _target_weights(ae_dst: Autoencoder, dim: int, symbol_weight: float) -> np.ndarray:
    schema = ae_dst.schema
    n_num = len(schema.numeric)
    w = np.zeros(ae_dst.scaler.mean.size)
    w[schema.value_slot] = 1.0
    for i in schema.key_slots:
        w[i] = symbol_weight
    w[n_num:n_num + dim] = symbol_weight
    return w


def latent_training_set(ae_src: Autoencoder, ae_dst: Autoencoder,
                        coobs: Sequence[CoObservation], g_src: SemanticGraph,
                        g_dst: SemanticGraph, symbol_weight: float = 1.0) -> LatentData:
    """Latent codes of co-observed messages and the messages the receiver would have sent."""
    schema = ae_src.schema
    coobs = [c for c in coobs if c.message.dialect == ae_src.domain]
    grounding = ground_sources(coobs, schema)
    sources, targets = [], []
    for c in coobs:
        sensor = grounding.get(source_key(c.message, schema))
        if sensor is None or sensor not in c.readings:
            continue
        sources.append(c.message)
        targets.append(encode_reading(ae_dst.domain, g_dst, sensor, c.readings[sensor], c.time))
    if not sources:
        raise ValueError("no co-observation could be grounded")
    H = ae_src.encode(ae_src.features(sources, g_src))
    Zt = ae_dst.features(targets, g_dst)
    return LatentData(H, Zt, _target_weights(ae_dst, g_dst.dim, symbol_weight),
                      {"|".join(str(v) for v in k): s for k, s in grounding.items()})


def closed_form_latent_predictions(ae_dst: Autoencoder, data: LatentData) -> np.ndarray:
    """Least-squares optimum of an affine latent map through a linear decoder.

    Returns standardized target-feature predictions on the supervised columns
    (zero elsewhere). The optimum in prediction space is the projection of
    the weighted targets onto the column space of ``[H, 1]`` on the left and
    the column space of the weighted decoder on the right.
    """
    W_d, b_d = ae_dst.decoder.affine()
    support = np.flatnonzero(data.weights > 0)
    root = np.sqrt(data.weights[support])
    D = root[:, None] * W_d[support]
    Y = root * (data.Zt[:, support] - b_d[support])
    H1 = np.column_stack([data.H, np.ones(len(data.H))])
    coef, *_ = np.linalg.lstsq(H1, Y, rcond=None)
    left = H1 @ coef
    proj = D @ np.linalg.pinv(D)
    out = np.zeros_like(data.Zt)
    out[:, support] = (left @ proj) / root + b_d[support]
    return out


def train_latent_map(ae_src: Autoencoder, ae_dst: Autoencoder, coobs: Sequence[CoObservation],
                     loss: LossSpec | str = "correlation",
                     cfg: LatentConfig | dict | None = None, *, g_src: SemanticGraph,
                     g_dst: SemanticGraph, scenario=None,
                     init: MlpMap | None = None) -> LatentMapTranslator:
    """Learn ``h_dst = map(h_src)`` from co-observations, without aligned pairs.

    ``correlation`` is minimized by gradient descent against the receiver's
    co-observed readings (grounded to source sensors by :func:`ground_sources`);
    ``causation`` and ``abstract`` are rollout losses on ``scenario`` and use
    simultaneous-perturbation descent starting from the correlation-free
    initialization (or ``init``).
    """
    cfg = cfg if isinstance(cfg, LatentConfig) else LatentConfig.from_dict(cfg)
    spec = loss if isinstance(loss, LossSpec) else LossSpec(loss)
    if spec.kind == "reconstruction":
        raise ValueError("reconstruction loss needs aligned pairs; latent maps learn without them")
    rng = np.random.default_rng(cfg.seed)
    sizes = (ae_src.latent_dim,) + cfg.hidden + (ae_dst.latent_dim,)
    latent_map = init.copy() if init is not None else MlpMap.init(
        sizes, cfg.activation, rng, zero_last=True)
    meta: dict = {"loss": spec.kind, "seed": cfg.seed}

    if spec.kind == "correlation":
        data = latent_training_set(ae_src, ae_dst, coobs, g_src, g_dst, cfg.symbol_weight)
        theta, curve = gradient_descent(
            latent_objective(latent_map, ae_dst.decoder, data.H, data.Zt, data.weights),
            latent_map.get_params(), n_samples=len(data.H), lr=cfg.lr, epochs=cfg.epochs,
            momentum=cfg.momentum, batch_size=cfg.batch_size, rng=rng)
        meta["grounding"] = data.grounding
    else:
        if scenario is None:
            raise ValueError(f"{spec.kind} loss needs a scenario to roll out")
        base = LatentMapTranslator(ae_src, ae_dst, latent_map)
        if spec.kind == "causation":
            from ..harness import run_episode

            reference = run_episode(scenario, "oracle", collect=False)

            def rollout(theta):
                return loss_causation(scenario, base.with_params(theta), reference, spec)
        else:
            def rollout(theta):
                return loss_abstract(scenario, base.with_params(theta), spec.weight)
        theta, curve = spsa(rollout, latent_map.get_params(), iterations=cfg.spsa_iterations,
                            a=cfg.spsa_a, c=cfg.spsa_c, rng=rng)
    _check_finite(theta, "latent map")
    latent_map.set_params(theta)
    meta["curve"] = curve
    return LatentMapTranslator(ae_src, ae_dst, latent_map, meta)
