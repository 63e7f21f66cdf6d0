"""Command line entry point (``m2mlab``).

Every subcommand reads a scenario (a JSON file, or the name of a built-in
scenario such as ``office``), takes its hyperparameters from the scenario's
``training`` section, and writes its artifacts to a run directory
``<out>/<scenario-hash>-s<seed>``. ``--set key.path=value`` overrides any
scenario field before hashing. Errors go to stderr as one JSON object and
the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path

from . import __version__
from .cps import CpsError
from .harness import (evaluate, resolve_translator, run_dir, run_episode, write_artifacts,
                      write_pairs)
from .scenario import Scenario, load_scenario
from .translators.losses import LossSpec, round_trip_check
from .translators.persist import load_autoencoder, save_autoencoder, save_translator

__all__ = ["main", "build_parser", "CliError"]

log = logging.getLogger("m2mlab")

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_THRESHOLD = 3
SEEDED = ("simulate", "gen-pairs", "train-e2e", "train-ae", "train-latent")


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}", EXIT_USAGE)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")


def _parse_override(text: str) -> tuple[list[str], object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise CliError("usage", f"--set expects key=value, got {text!r}", EXIT_USAGE)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_overrides(doc: dict, overrides: list[str]) -> dict:
    for text in overrides:
        path, value = _parse_override(text)
        node = doc
        for part in path[:-1]:
            child = node.get(part) if isinstance(node, dict) else None
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[path[-1]] = value
    return doc


def _scenario(args) -> Scenario:
    s = load_scenario(args.scenario)
    doc = _apply_overrides(dict(s.doc), args.set or [])
    if args.seed is not None:
        doc["seed"] = args.seed
    return Scenario.from_dict(doc)


def _out_dir(args, s: Scenario) -> Path:
    root = args.out or os.environ.get("M2M_LAB_OUT") or "runs"
    out = run_dir(root, s)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _translator_arg(value: str | None, s: Scenario, reverse: bool = False):
    if value in (None, "none"):
        return None
    if value == "oracle":
        t = resolve_translator(s, "oracle")
        return t.reverse() if reverse else t
    if not Path(value).exists():
        raise CliError("io", f"translator document {value!r} not found")
    return resolve_translator(s, value)


def cmd_simulate(args) -> int:
    s = _scenario(args)
    result = run_episode(s, _translator_arg(args.translator, s))
    out = write_artifacts(_out_dir(args, s), result)
    _print({"out": str(out), "translator": result.translator,
            "messages": result.counters.as_dict(), "energy": result.energy(),
            "comfort": result.comfort()})
    return 0


def cmd_gen_pairs(args) -> int:
    from .harness import make_pair_corpus

    s = _scenario(args)
    cfg = s.training.get("pairs", {})
    n = args.n if args.n is not None else int(cfg.get("n_train", 200)) + int(cfg.get("n_heldout", 0))
    pairs = make_pair_corpus(s, n, seed=cfg.get("seed"), burn_in=int(cfg.get("burn_in", 0)))
    out = _out_dir(args, s)
    write_pairs(out / "pairs.ndjson", pairs)
    _print({"out": str(out), "pairs": len(pairs)})
    return 0


def cmd_train_e2e(args) -> int:
    from .experiments import run_e2e

    s = _scenario(args)
    t, report = run_e2e(s)
    out = _out_dir(args, s)
    tid = save_translator(t, out / "translator_e2e.json")
    report["translator_id"] = tid
    _write_json(out / "train_e2e.json", report)
    _print({"out": str(out), **report})
    return 0


def cmd_train_ae(args) -> int:
    from .experiments import run_autoencoders

    s = _scenario(args)
    aes, report = run_autoencoders(s, run_episode(s, "none"))
    out = _out_dir(args, s)
    for domain, ae in aes.items():
        report[domain]["autoencoder_id"] = save_autoencoder(ae, out / f"ae_{domain}.json")
    _write_json(out / "train_ae.json", report)
    _print({"out": str(out), **report})
    return 0


def cmd_train_latent(args) -> int:
    from .experiments import run_autoencoders
    from .translators.train import LatentConfig, train_latent_map

    s = _scenario(args)
    source = args.source
    target = "B" if source == "A" else "A"
    key = args.config or ("latent" if source == "A" else "latent_reverse")
    if key not in s.training:
        raise CliError("config", f"scenario has no training.{key} section")
    cfg = LatentConfig.from_dict(s.training[key])
    episode = run_episode(s, "none")
    if args.ae_dir:
        aes = {d: load_autoencoder(Path(args.ae_dir) / f"ae_{d}.json") for d in ("A", "B")}
    else:
        aes, _ = run_autoencoders(s, episode)
    loss = LossSpec(args.loss or cfg.loss)
    coobs = episode.coobs_a if source == "A" else episode.coobs_b
    t = train_latent_map(aes[source], aes[target], coobs, loss, cfg, g_src=s.graph(source),
                         g_dst=s.graph(target), scenario=s)
    out = _out_dir(args, s)
    name = f"translator_latent_{source}{target}.json"
    tid = save_translator(t, out / name)
    summary = {"translator_id": tid, "loss": loss.kind, "config": key,
               "final_objective": t.metadata["curve"][-1] if t.metadata.get("curve") else None}
    _write_json(out / f"train_latent_{source}{target}.json", summary)
    _print({"out": str(out), "translator": str(out / name), **summary})
    return 0


def cmd_evaluate(args) -> int:
    s = _scenario(args)
    t = _translator_arg(args.translator, s)
    reverse = _translator_arg(args.reverse, s, reverse=True) if args.reverse else None
    report = evaluate(t if t is not None else "none", s, reverse=reverse)
    result = run_episode(s, t) if args.episode_artifacts else None
    out = write_artifacts(_out_dir(args, s), result, report)
    _print({"out": str(out), "losses": report["losses"], "drop_rate": report["drop_rate"]})
    return 0


def cmd_roundtrip(args) -> int:
    s = _scenario(args)
    t_ab = _translator_arg(args.translator, s)
    t_ba = _translator_arg(args.reverse, s, reverse=True)
    if t_ab is None or t_ba is None:
        raise CliError("usage", "roundtrip needs a forward and a reverse translator", EXIT_USAGE)
    episode = run_episode(s, "none")
    corpus = (episode.corpus_a if t_ab.source == "A" else episode.corpus_b)[:args.n]
    report = round_trip_check(t_ab, t_ba, corpus, s.graph_a, s.graph_b)
    out = _out_dir(args, s)
    _write_json(out / "roundtrip.json", report)
    _print({"out": str(out), **report})
    return 0


def cmd_gradcheck(args) -> int:
    from .experiments import gradcheck_suite

    s = _scenario(args)
    results = gradcheck_suite(s)
    tol = float(s.training.get("gradcheck", {}).get("tolerance", 1e-4))
    worst = max(err for _, err in results)
    report = {"max_relative_error": worst, "tolerance": tol,
              "checks": {name: float(err) for name, err in results}}
    if args.out or os.environ.get("M2M_LAB_OUT"):
        _write_json(_out_dir(args, s) / "gradcheck.json", report)
    print(f"max relative error {worst:.3e} (tolerance {tol:.0e})")
    for name, err in results:
        print(f"  {name:<20} {err:.3e}")
    if not worst < tol:
        raise CliError("threshold", f"gradient check failed: {worst:.3e} >= {tol:.0e}",
                       EXIT_THRESHOLD)
    return 0


def cmd_serve(args) -> int:
    from .service import Registry, ServiceError, TranslationService, parse_address, start_server

    s = _scenario(args)
    registry = Registry(args.registry)
    for value in args.translator or []:
        t = _translator_arg(value, s)
        if t is not None:
            print(json.dumps({"registered": registry.add(t), "translator": value}), flush=True)
    try:
        server = start_server(parse_address(args.listen), TranslationService(registry, s.graph_a,
                                                                             s.graph_b))
    except ServiceError as exc:
        raise CliError("startup", str(exc)) from exc
    host, port = server.server_address[:2]
    print(json.dumps({"listening": f"{host}:{port}", "translators": registry.ids()}), flush=True)

    stop = threading.Event()
    previous = {sig: signal.signal(sig, lambda *_: stop.set())
                for sig in (signal.SIGINT, signal.SIGTERM)}
    try:
        while not stop.wait(0.2):
            pass
    finally:
        server.shutdown()
        server.server_close()
        for sig, handler in previous.items():
            signal.signal(sig, handler)
    print(json.dumps({"stopped": f"{host}:{port}"}), flush=True)
    return 0


def _common(p: argparse.ArgumentParser, seed_required: bool) -> None:
    p.add_argument("--scenario", required=True,
                   help="scenario JSON file, or a built-in name (office, office_noisefree, "
                        "office_fault)")
    p.add_argument("--seed", type=int, required=seed_required,
                   help="episode seed" + ("" if seed_required else
                                          " (default: the scenario's seed)"))
    p.add_argument("--out", help="output root; defaults to $M2M_LAB_OUT, then ./runs")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario field, e.g. training.e2e.epochs=100 "
                        "(value parsed as JSON when possible; repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="m2mlab", description="Learned message translation between two "
                     "simulated cyber-physical systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING",
                        help="logging level for diagnostics on stderr (default WARNING)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p, name in SEEDED)
        p.set_defaults(func=fn)
        return p

    p = add("simulate", cmd_simulate, "run one episode and write metrics.csv, corpora and "
            "co-observations")
    p.add_argument("--translator", default="none",
                   help="none, oracle, or a translator document path (default none)")

    p = add("gen-pairs", cmd_gen_pairs, "write oracle-translated ground-truth pairs")
    p.add_argument("--n", type=int, help="number of pairs (default from training.pairs)")

    add("train-e2e", cmd_train_e2e, "train the end-to-end translator on oracle pairs")
    add("train-ae", cmd_train_ae, "train one autoencoder per dialect")

    p = add("train-latent", cmd_train_latent, "train a latent-map translator from "
            "co-observations, without aligned pairs")
    p.add_argument("--source", choices=("A", "B"), default="A",
                   help="source dialect (default A)")
    p.add_argument("--loss", choices=("correlation", "causation", "abstract"),
                   help="training loss (default from the training config)")
    p.add_argument("--config", help="training section to use (default latent for A, "
                                     "latent_reverse for B)")
    p.add_argument("--ae-dir", help="directory holding ae_A.json and ae_B.json from train-ae "
                                    "(default: train them here)")

    p = add("evaluate", cmd_evaluate, "compute every loss, drop rate and round-trip drift")
    p.add_argument("--translator", default="oracle",
                   help="none, oracle, or a translator document path (default oracle)")
    p.add_argument("--reverse", help="reverse translator for the round trip: oracle or a path")
    p.add_argument("--episode-artifacts", action="store_true",
                   help="also write the episode's metrics.csv and corpora")

    p = add("roundtrip", cmd_roundtrip, "measure A->B->A drift of a translator pair")
    p.add_argument("--translator", required=True, help="forward translator: oracle or a path")
    p.add_argument("--reverse", required=True, help="reverse translator: oracle or a path")
    p.add_argument("--n", type=int, default=200, help="corpus size (default 200)")

    p = add("serve", cmd_serve, "serve translators as NDJSON over TCP until SIGINT/SIGTERM")
    p.add_argument("--listen", default="127.0.0.1:7878",
                   help="host:port to bind (default 127.0.0.1:7878; port 0 picks one)")
    p.add_argument("--registry", help="directory of translator documents, loaded at start "
                                      "and written on register")
    p.add_argument("--translator", action="append",
                   help="oracle or a document path to register at start (repeatable)")

    add("gradcheck", cmd_gradcheck, "finite-difference check of every training objective; "
        "exits nonzero if the max relative error reaches the tolerance")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CliError as exc:
        _emit_error(exc.kind, str(exc))
        return exc.code
    except (OSError, ValueError, KeyError, IndexError, RuntimeError, CpsError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
