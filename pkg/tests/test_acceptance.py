"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Every runner returns its checks and the bytes of the artifacts it produced;
the reproducibility test reruns all of them and compares those bytes.
"""

import json
import re
import socket
import tempfile
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE, SAMPLE_A, SAMPLE_B
from messages_gen import random_messages
from m2mlab.codec import parse, serialize
from m2mlab.experiments import (gradcheck_suite, linear_equivalence, run_autoencoders, run_e2e,
                                run_latent)
from m2mlab.harness import run_episode, write_artifacts, evaluate
from m2mlab.scenario import load_scenario
from m2mlab.service import Registry, TranslationService, request_line, start_server
from m2mlab.translators import ConstantTranslator, OracleTranslator
from m2mlab.translators.losses import (LossSpec, correlation_on_coobs, loss_abstract,
                                       loss_causation, round_trip_check)
from m2mlab.translators.persist import canonical_json
from m2mlab.translators.train import LatentConfig, train_latent_map


def _json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def _doc(t) -> bytes:
    return (canonical_json(t.to_document()) + "\n").encode()


def _dir_bytes(path: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()}


def run_a1():
    checks, files = [], {}
    corpora = {d: random_messages(d, 10_000, seed) for d, seed in (("A", 101), ("B", 202))}
    start = time.perf_counter()
    for d, msgs in corpora.items():
        blobs = [serialize(m) for m in msgs]
        parsed = [parse(b, d) for b in blobs]
        again = [serialize(m) for m in parsed]
        checks.append((f"parse.serialize identity {d}",
                       all(p == m for p, m in zip(parsed, msgs)), f"{len(msgs)} messages"))
        checks.append((f"serialize.parse bit-exact {d}", again == blobs, f"{len(blobs)} blobs"))
        files[f"messages_{d}.ndjson"] = b"\n".join(blobs) + b"\n"
    elapsed = time.perf_counter() - start
    checks.append(("time", elapsed < 5.0, f"{elapsed:.2f} s < 5 s"))

    head, lon, lat, kel = parse(SAMPLE_A, "A").records
    (rec,) = parse(SAMPLE_B, "B").records
    checks.append(("sample A values",
                   (head.base_name, head.base_time, lon.unit, lon.value, lat.unit, lat.value,
                    kel.unit, kel.value) == ("127.0.0.1/temp-service", 1549359472, "lon",
                                             65.61721, "lat", 22.13683, "K", 253), ""))
    checks.append(("sample B values", (rec.name, rec.unit, rec.value, rec.time) ==
                   ("office-A2312-temp-sensor", "Cel", -20.4, 1549359472), ""))
    return checks, files


LINEAR_CHECKS = ("latent_linear", "causation")


def run_a2():
    s = load_scenario("office")
    start = time.perf_counter()
    results = gradcheck_suite(s)
    elapsed = time.perf_counter() - start
    checks = []
    for name, err in results:
        tol = 1e-7 if name.startswith(LINEAR_CHECKS) else 1e-4
        checks.append((name, err < tol, f"{err:.2e} < {tol:.0e}"))
    checks.append(("time", elapsed < 10.0, f"{elapsed:.2f} s < 10 s"))
    return checks, {"gradcheck.json": _json(dict(results))}


def run_a3():
    s = load_scenario("office")
    start = time.perf_counter()
    oracle = OracleTranslator(s.eval_graph)
    ep_oracle = run_episode(s, oracle)
    causation = loss_causation(s, oracle, reference=run_episode(s, "oracle", collect=False))
    abstract_oracle = loss_abstract(s, oracle)
    abstract_none = loss_abstract(s, None)
    coobs = ep_oracle.coobs_a
    corr_oracle = correlation_on_coobs(oracle, coobs, s)

    # A constant translator always reports one office, so its correlation loss is the
    # squared deviation of that office's sensor from a fixed value, which is smallest
    # at the mean. The variance of each sensor therefore bounds every constant below.
    cfg_b = s.cps("B")
    bound = min(float(np.var([c.readings[sym] for c in coobs if sym in c.readings]))
                for sym in cfg_b.sensors)
    names = sorted({m.records[0].name for m in ep_oracle.corpus_b})
    means = [float(np.mean([c.readings[sym] for c in coobs if sym in c.readings]))
             for sym in cfg_b.sensors]
    best_constant = min(correlation_on_coobs(ConstantTranslator([m - 273.15], name), coobs, s)
                        for name in names for m in means)
    elapsed = time.perf_counter() - start

    checks = [
        ("causation(oracle) == 0", causation == 0.0, f"{causation!r}"),
        ("abstract(oracle) < abstract(none)", abstract_oracle < abstract_none,
         f"{abstract_oracle:.2f} < {abstract_none:.2f}"),
        ("correlation(oracle) < every constant", corr_oracle < bound,
         f"{corr_oracle:.4g} < {bound:.4g}"),
        ("best tried constant above bound", best_constant >= bound * (1 - 1e-6),
         f"{best_constant:.4g}"),
        ("time", elapsed < 30.0, f"{elapsed:.2f} s < 30 s"),
    ]
    with tempfile.TemporaryDirectory() as tmp:
        report = evaluate(oracle, s)
        write_artifacts(tmp, ep_oracle, report)
        files = _dir_bytes(Path(tmp))
    files["a3.json"] = _json({"causation": causation, "abstract_oracle": abstract_oracle,
                              "abstract_none": abstract_none, "correlation_oracle": corr_oracle,
                              "constant_bound": bound})
    return checks, files


def run_e2():
    s = load_scenario("office")
    start = time.perf_counter()
    t, report = run_e2e(s)
    t2, _ = run_e2e(s)
    elapsed = time.perf_counter() - start
    checks = [
        ("held-out pairs", report["n"] == 50, f"{report['n']}"),
        ("max numeric error < 0.5 Cel", report["max_error_cel"] < 0.5,
         f"{report['max_error_cel']:.4f}"),
        ("symbol preservation >= 0.95", report["symbol_preservation"] >= 0.95,
         f"{report['symbol_preservation']:.3f}"),
        ("deterministic per seed", _doc(t) == _doc(t2), ""),
        ("time", elapsed < 120.0, f"{elapsed:.2f} s < 120 s"),
    ]
    return checks, {"translator_e2e.json": _doc(t), "e2e_report.json": _json(report)}


def run_e3():
    s = load_scenario("office")
    start = time.perf_counter()
    aes, report = run_autoencoders(s, run_episode(s, "none"))
    elapsed = time.perf_counter() - start
    checks = [(f"held-out MSE {d}", r["heldout_mse"] < 0.01, f"{r['heldout_mse']:.2e}")
              for d, r in sorted(report.items())]
    checks.append(("latent width 4", all(ae.latent_dim == 4 for ae in aes.values()), ""))
    checks.append(("time", elapsed < 120.0, f"{elapsed:.2f} s < 120 s"))
    files = {f"ae_{d}.json": (canonical_json(ae.to_document()) + "\n").encode()
             for d, ae in aes.items()}
    files["ae_report.json"] = _json(report)
    return checks, files


def run_e4():
    start = time.perf_counter()
    nf = load_scenario("office_noisefree")
    lin = linear_equivalence(nf)

    s = load_scenario("office")
    episode = run_episode(s, "none")
    aes, _ = run_autoencoders(s, episode)
    cfg = LatentConfig.from_dict(s.training["causation"])
    causal = train_latent_map(aes["A"], aes["B"], episode.coobs_a, LossSpec("causation"), cfg,
                              g_src=s.graph_a, g_dst=s.graph_b, scenario=s)
    reference = run_episode(s, "oracle", collect=False)
    at_zero = loss_causation(s, causal.with_params(np.zeros(causal.latent_map.n_params)),
                             reference)
    final = loss_causation(s, causal, reference)

    t_ab = run_latent(s, episode, aes, "A")
    t_ba = run_latent(s, episode, aes, "B")
    rt = round_trip_check(t_ab, t_ba, episode.corpus_a[:200], s.graph_a, s.graph_b)
    elapsed = time.perf_counter() - start
    checks = [
        ("linear map vs least squares < 1e-3", lin["relative_error"] < 1e-3,
         f"{lin['relative_error']:.2e}"),
        ("causation decreases from theta=0", final < at_zero, f"{at_zero:.5f} -> {final:.5f}"),
        ("round-trip mean drift < 1.0 K", rt["mean_drift"] < 1.0,
         f"{rt['mean_drift']:.4f} K over {rt['n']}, {rt['failures']} failures"),
        ("time", elapsed < 300.0, f"{elapsed:.2f} s < 300 s"),
    ]
    files = {"translator_linear.json": _doc(lin["translator"]),
             "translator_causation.json": _doc(causal),
             "translator_latent_AB.json": _doc(t_ab),
             "translator_latent_BA.json": _doc(t_ba),
             "e4.json": _json({"relative_error": lin["relative_error"], "causation_zero": at_zero,
                               "causation_final": final, "round_trip": rt})}
    return checks, files


def run_e5():
    start = time.perf_counter()
    healthy = load_scenario("office")
    faulty = load_scenario("office_fault")
    episode = run_episode(healthy, "none")
    aes, _ = run_autoencoders(healthy, episode)
    t = run_latent(healthy, episode, aes, "A")
    learned = loss_abstract(faulty, t)
    baseline = loss_abstract(faulty, None)
    elapsed = time.perf_counter() - start
    checks = [
        ("fault present", bool(faulty.faults), f"{faulty.faults[0]}"),
        ("abstract(latent) < abstract(none) under fault", learned < baseline,
         f"{learned:.1f} < {baseline:.1f}"),
        ("time", elapsed < 120.0, f"{elapsed:.2f} s < 120 s"),
    ]
    return checks, {"translator.json": _doc(t),
                    "e5.json": _json({"latent": learned, "none": baseline})}


LATENCY = re.compile(rb',"latency_us":\d+\}\n$')


def _strip(line: bytes) -> bytes:
    out, n = LATENCY.subn(b"}\n", line)
    assert n == 1, line
    return out


def _exchange(address, lines):
    with socket.create_connection(address, timeout=20) as sock:
        f = sock.makefile("rwb")
        out = []
        for line in lines:
            f.write(line)
            f.flush()
            out.append(f.readline())
        return out


MALFORMED = [b"{\n", b"\xff\xfe\xfd\n", b"[]\n", b'{"op":"translate"}\n', b"null\n",
             b'{"op":"translate","translator_id":"x","message":"[{"}\n',
             b"z" * ((1 << 20) + 5) + b"\n"]


def run_a6():
    s = load_scenario("office")
    episode = run_episode(s, "none")
    e2e, _ = run_e2e(s, episode)
    registry = Registry()
    oracle = OracleTranslator(s.eval_graph)
    ids = [registry.add(oracle), registry.add(oracle.reverse()), registry.add(e2e)]
    service = TranslationService(registry, s.graph_a, s.graph_b)
    requests = []
    for i in range(100):
        kind = i % 3
        corpus = episode.corpus_b if kind == 1 else episode.corpus_a
        msg = serialize(corpus[(7 * i) % len(corpus)]).decode()
        requests.append(request_line("translate", translator_id=ids[kind], message=msg))

    server = start_server(("127.0.0.1", 0), service)
    start = time.perf_counter()
    try:
        address = server.server_address
        sequential = _exchange(address, requests)

        concurrent = [None] * len(requests)
        garbage = [None] * len(MALFORMED)
        barrier = threading.Barrier(len(requests) + len(MALFORMED) + 1)

        def client(i):
            barrier.wait()
            concurrent[i] = _exchange(address, [requests[i]])[0]

        def vandal(i):
            barrier.wait()
            garbage[i] = _exchange(address, [MALFORMED[i]])[0]

        def hang_up():
            barrier.wait()
            with socket.create_connection(address, timeout=20) as sock:
                sock.sendall(b'{"op":"translate","transl')

        threads = [threading.Thread(target=client, args=(i,)) for i in range(len(requests))]
        threads += [threading.Thread(target=vandal, args=(i,)) for i in range(len(MALFORMED))]
        threads.append(threading.Thread(target=hang_up))
        for th in threads:
            th.start()
        for th in threads:
            th.join(timeout=30)
        alive = json.loads(_exchange(address, [request_line("list")])[0])["status"] == "ok"
        still_serving = server.thread.is_alive()
    finally:
        server.shutdown()
        server.server_close()
    elapsed = time.perf_counter() - start

    seq = [_strip(r) for r in sequential]
    con = [_strip(r) if r else b"" for r in concurrent]
    statuses = [json.loads(r)["status"] if r else None for r in garbage]
    checks = [
        ("all sequential ok", all(json.loads(r)["status"] == "ok" for r in seq), ""),
        ("concurrent == sequential (100)", con == seq,
         f"{sum(a == b for a, b in zip(con, seq))}/100 identical"),
        ("malformed lines answered", all(st in ("parse_error", "schema_error",
                                                "unknown_translator") for st in statuses),
         ",".join(map(str, statuses))),
        ("service alive afterwards", alive and still_serving, ""),
        ("time", elapsed < 30.0, f"{elapsed:.2f} s < 30 s"),
    ]
    return checks, {"responses.ndjson": b"".join(seq)}


RUNNERS = {"A1": run_a1, "A2": run_a2, "A3": run_a3, "E2": run_e2, "E3": run_e3,
           "E4": run_e4, "E5": run_e5, "A6": run_a6}
_FIRST: dict = {}


def first_run(cid):
    if cid not in _FIRST:
        _FIRST[cid] = RUNNERS[cid]()
    return _FIRST[cid]


def verdict(request, cid, checks):
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{name}{' [' + d + ']' if d else ''}{'' if good else ' FAILED'}"
                       for name, good, d in checks)
    line = f"{cid} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    request.config.stash[ACCEPTANCE].append(line)
    return ok


@pytest.mark.parametrize("cid", list(RUNNERS))
def test_criterion(cid, request):
    checks, _ = first_run(cid)
    assert verdict(request, cid, checks), [c for c in checks if not c[1]]


def test_a7_reproducible(request, tmp_path):
    checks = []
    for cid in RUNNERS:
        _, files_1 = first_run(cid)
        _, files_2 = RUNNERS[cid]()
        d1, d2 = tmp_path / "run1" / cid, tmp_path / "run2" / cid
        for d, files in ((d1, files_1), (d2, files_2)):
            d.mkdir(parents=True)
            for name, blob in files.items():
                (d / name).write_bytes(blob)
        a, b = _dir_bytes(d1), _dir_bytes(d2)
        differing = sorted(n for n in a.keys() | b.keys() if a.get(n) != b.get(n))
        checks.append((cid, a.keys() == b.keys() and not differing,
                       f"{len(a)} files" + (f", differ: {differing}" if differing else "")))
    assert verdict(request, "A7", checks), [c for c in checks if not c[1]]
