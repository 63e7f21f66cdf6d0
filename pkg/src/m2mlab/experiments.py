"""Experiment pipelines shared by the command line and the acceptance suite.

Every hyperparameter comes from the scenario's ``training`` section.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import GroundTruthPair, schema_for
from .harness import EpisodeResult, make_pair_corpus, run_episode
from .scenario import Scenario
from .translators.base import Autoencoder, EndToEndTranslator, LatentMapTranslator
from .translators.features import FeatureScaler, featurize_all
from .translators.losses import LossSpec
from .translators.mlp import MlpMap
from .translators.optim import grad_check
from .translators.train import (AEConfig, E2EConfig, LatentConfig, ae_objective,
                                closed_form_latent_predictions, e2e_objective,
                                e2e_training_arrays, latent_objective, latent_training_set,
                                train_autoencoder, train_end_to_end, train_latent_map)

__all__ = [
    "pair_split",
    "heldout_e2e_report",
    "run_e2e",
    "split_corpus",
    "run_autoencoders",
    "run_latent",
    "linear_equivalence",
    "gradcheck_suite",
]


def _training(s: Scenario, key: str) -> dict:
    cfg = s.training.get(key)
    if cfg is None:
        raise KeyError(f"scenario has no training.{key} section")
    return dict(cfg)


def pair_split(s: Scenario, episode: EpisodeResult | None = None):
    p = _training(s, "pairs")
    n_train, n_held = int(p["n_train"]), int(p["n_heldout"])
    pairs = make_pair_corpus(s, n_train + n_held, seed=p.get("seed"), episode=episode,
                             burn_in=int(p.get("burn_in", 0)))
    return pairs[:n_train], pairs[n_train:]


def heldout_e2e_report(t: EndToEndTranslator, heldout: list[GroundTruthPair], s: Scenario) -> dict:
    outs = t.apply_many([p.m_a for p in heldout], s.graph_a, s.graph_b)
    err = [abs(o.records[0].value - p.m_b.records[0].value) for o, p in zip(outs, heldout)]
    same = [o.records[0].name == p.m_b.records[0].name for o, p in zip(outs, heldout)]
    return {"n": len(heldout), "max_error_cel": float(max(err)),
            "mean_error_cel": float(np.mean(err)),
            "symbol_preservation": float(np.mean(same))}


def run_e2e(s: Scenario, episode: EpisodeResult | None = None):
    train, heldout = pair_split(s, episode)
    t = train_end_to_end(train, s.graph_a, s.graph_b, E2EConfig.from_dict(_training(s, "e2e")),
                         epoch=s.epoch)
    return t, heldout_e2e_report(t, heldout, s)


def split_corpus(corpus, fraction: float, seed: int):
    """Deterministic train/held-out split of a message corpus."""
    idx = np.random.default_rng(seed).permutation(len(corpus))
    n_held = int(round(fraction * len(corpus)))
    held = sorted(idx[:n_held].tolist())
    train = sorted(idx[n_held:].tolist())
    return [corpus[i] for i in train], [corpus[i] for i in held]


def run_autoencoders(s: Scenario, episode: EpisodeResult, heldout: float | None = None):
    """Per-dialect autoencoders and their held-out reconstruction MSE."""
    cfg = AEConfig.from_dict(_training(s, "ae"))
    fraction = float(s.training.get("ae_heldout", 0.2)) if heldout is None else heldout
    out, report = {}, {}
    for domain, corpus in (("A", episode.corpus_a), ("B", episode.corpus_b)):
        graph = s.graph(domain)
        train, held = split_corpus(corpus, fraction, cfg.seed)
        ae = train_autoencoder(train, graph, cfg, epoch=s.epoch)
        out[domain] = ae
        report[domain] = {"train_mse": ae.metadata["train_mse"],
                          "heldout_mse": ae.reconstruction_mse(ae.features(held, graph))
                          if held else None}
    return out, report


def run_latent(s: Scenario, episode: EpisodeResult, aes: dict[str, Autoencoder],
               source: str = "A", key: str | None = None) -> LatentMapTranslator:
    """Latent-map translator ``source -> other`` from the episode's co-observations."""
    target = "B" if source == "A" else "A"
    key = key or ("latent" if source == "A" else "latent_reverse")
    cfg = LatentConfig.from_dict(_training(s, key))
    coobs = episode.coobs_a if source == "A" else episode.coobs_b
    return train_latent_map(aes[source], aes[target], coobs, LossSpec(cfg.loss), cfg,
                            g_src=s.graph(source), g_dst=s.graph(target), scenario=s)


def _value_cel(ae: Autoencoder, Z: np.ndarray) -> np.ndarray:
    vs = ae.schema.value_slot
    return Z[:, vs] * ae.scaler.scale[vs] + ae.scaler.mean[vs]


def linear_equivalence(s: Scenario, episode: EpisodeResult | None = None) -> dict:
    """Affine latent map by gradient descent against the closed-form least-squares optimum."""
    episode = episode or run_episode(s, "none")
    aes, _ = run_autoencoders(s, episode, heldout=0.0)
    t = run_latent(s, episode, aes, "A", key="latent_linear")
    cfg = LatentConfig.from_dict(_training(s, "latent_linear"))
    data = latent_training_set(aes["A"], aes["B"], episode.coobs_a, s.graph_a, s.graph_b,
                               cfg.symbol_weight)
    gd = _value_cel(aes["B"], aes["B"].decode(t.latent_map(data.H)))
    ls = _value_cel(aes["B"], closed_form_latent_predictions(aes["B"], data))
    return {"relative_error": float(np.linalg.norm(gd - ls) / np.linalg.norm(ls)),
            "translator": t, "gd": gd, "ls": ls}


def gradcheck_suite(s: Scenario, episode: EpisodeResult | None = None) -> list[tuple[str, float]]:
    """Max relative gradient error of every network objective used in the experiments."""
    gc = _training(s, "gradcheck")
    n, step = int(gc["samples"]), float(gc["step"])
    rng = np.random.default_rng(int(gc["seed"]))
    episode = episode or run_episode(s, "none")
    results = []

    train, _ = pair_split(s, episode)
    e2e = E2EConfig.from_dict(_training(s, "e2e"))
    X, scaler, layout, T = e2e_training_arrays(train[:n], s.graph_a, s.graph_b, s.epoch)
    Z = scaler.transform(X)
    net = MlpMap.init((Z.shape[1],) + e2e.hidden + (T.shape[1],), "tanh", rng)
    w = np.concatenate([np.ones(len(layout.slots)), np.full(layout.dim, e2e.symbol_weight)])
    # small random biases so that no coordinate sits at an exact zero of the gradient
    theta = net.get_params() + 0.01 * rng.standard_normal(net.n_params)
    results.append(("e2e", grad_check(net, e2e_objective(net, Z, T, w), step, theta)))

    ae_cfg = AEConfig.from_dict(_training(s, "ae"))
    for domain, corpus in (("A", episode.corpus_a), ("B", episode.corpus_b)):
        schema = schema_for(domain, s.epoch)
        Xd = featurize_all(corpus[:64], schema, s.graph(domain))
        Zd = FeatureScaler.fit(Xd, len(schema.numeric)).transform(Xd)[:n]
        d = Zd.shape[1]
        enc = MlpMap.init((d,) + ae_cfg.hidden + (ae_cfg.latent_dim,), ae_cfg.activation, rng)
        dec = MlpMap.init((ae_cfg.latent_dim,) + tuple(reversed(ae_cfg.hidden)) + (d,),
                          ae_cfg.activation, rng)
        theta = np.concatenate([enc.get_params(), dec.get_params()])
        theta = theta + 0.01 * rng.standard_normal(theta.size)
        results.append((f"ae_{domain}", grad_check(_Joint(theta), ae_objective(enc, dec, Zd),
                                                   step, theta)))

    for key in ("latent", "latent_reverse", "latent_linear", "causation"):
        cfg = LatentConfig.from_dict(_training(s, key))
        src, dst = ("B", "A") if key == "latent_reverse" else ("A", "B")
        m = MlpMap.init((ae_cfg.latent_dim,) + cfg.hidden + (ae_cfg.latent_dim,),
                        cfg.activation, rng)
        dim = s.graph(dst).dim
        n_num = len(schema_for(dst).numeric)
        width = n_num + dim * (4 if dst == "A" else 2)
        dec = MlpMap.init((ae_cfg.latent_dim, width), "linear", rng)
        H = rng.standard_normal((n, ae_cfg.latent_dim))
        Zt = rng.standard_normal((n, width))
        weights = np.zeros(width)
        weights[:n_num] = 1.0
        weights[n_num:n_num + dim] = cfg.symbol_weight
        theta = m.get_params() + 0.1 * rng.standard_normal(m.n_params)
        results.append((f"{key}_{src}{dst}",
                        grad_check(m, latent_objective(m, dec, H, Zt, weights), step, theta)))
    return results


@dataclass
class _Joint:
    theta: np.ndarray

    def get_params(self) -> np.ndarray:
        return self.theta
