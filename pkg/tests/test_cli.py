import json
import os
import signal
import socket
import subprocess
import sys

import pytest

from conftest import SAMPLE_A
from m2mlab.cli import build_parser, main

SUBCOMMANDS = {
    "simulate": ["--scenario", "--seed", "--out", "--set", "--translator"],
    "gen-pairs": ["--scenario", "--seed", "--out", "--set", "--n"],
    "train-e2e": ["--scenario", "--seed", "--out", "--set"],
    "train-ae": ["--scenario", "--seed", "--out", "--set"],
    "train-latent": ["--scenario", "--seed", "--out", "--set", "--source", "--loss", "--config",
                     "--ae-dir"],
    "evaluate": ["--scenario", "--seed", "--out", "--set", "--translator", "--reverse",
                 "--episode-artifacts"],
    "roundtrip": ["--scenario", "--seed", "--out", "--set", "--translator", "--reverse", "--n"],
    "serve": ["--scenario", "--seed", "--out", "--set", "--listen", "--registry", "--translator"],
    "gradcheck": ["--scenario", "--seed", "--out", "--set"],
}

FAST_AE = ["--set", "training.ae.epochs=40", "--set", "training.ae.hidden=[16]"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


@pytest.fixture(autouse=True)
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("M2M_LAB_OUT", str(tmp_path / "runs"))
    monkeypatch.chdir(tmp_path)
    return tmp_path / "runs"


@pytest.mark.parametrize("name", sorted(SUBCOMMANDS))
def test_help_documents_every_flag(name, capsys):
    with pytest.raises(SystemExit) as exc:
        main([name, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in SUBCOMMANDS[name]:
        assert flag in text, (name, flag)
    sub = build_parser()._subparsers._group_actions[0].choices[name]
    for action in sub._actions:
        assert action.help, (name, action.option_strings)


def test_top_level_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    text = capsys.readouterr().out
    assert all(name in text for name in SUBCOMMANDS)


def test_simulate_is_deterministic(capsys, out_root, tmp_path):
    code, out, _ = run(capsys, "simulate", "--scenario", "office", "--seed", "7")
    assert code == 0
    first = last_json(out)["out"]
    metrics = open(os.path.join(first, "metrics.csv"), "rb").read()
    code, out, _ = run(capsys, "simulate", "--scenario", "office", "--seed", "7",
                       "--out", str(tmp_path / "other"))
    second = last_json(out)["out"]
    assert os.path.basename(first) == os.path.basename(second)
    assert os.path.basename(first).endswith("-s7")
    assert open(os.path.join(second, "metrics.csv"), "rb").read() == metrics
    assert str(out_root) in first


def test_seed_changes_run_directory(capsys):
    _, a, _ = run(capsys, "simulate", "--scenario", "office", "--seed", "7")
    _, b, _ = run(capsys, "simulate", "--scenario", "office", "--seed", "8")
    pa, pb = last_json(a)["out"], last_json(b)["out"]
    assert pa != pb and pa.split("-")[0] == pb.split("-")[0]


def test_default_out_is_runs(capsys, monkeypatch, tmp_path):
    monkeypatch.delenv("M2M_LAB_OUT")
    code, out, _ = run(capsys, "gen-pairs", "--scenario", "office", "--seed", "7", "--n", "5")
    assert code == 0
    path = last_json(out)["out"]
    assert path.startswith("runs")
    lines = (tmp_path / path / "pairs.ndjson").read_text().splitlines()
    assert len(lines) == 5


def test_gradcheck_exit_codes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--scenario", "office")
    assert code == 0 and out.startswith("max relative error")
    code, out, err = run(capsys, "gradcheck", "--scenario", "office",
                         "--set", "training.gradcheck.tolerance=1e-12")
    assert code == 3
    assert json.loads(err)["error"] == "threshold"


def test_evaluate_oracle(capsys):
    code, out, _ = run(capsys, "evaluate", "--scenario", "office", "--reverse", "oracle")
    assert code == 0
    path = last_json(out)["out"]
    report = json.loads(open(os.path.join(path, "report.json")).read())
    assert report["losses"]["causation"] == 0.0
    assert report["round_trip"]["max_drift"] <= 1e-6
    assert os.path.exists(os.path.join(path, "report.csv"))


def test_roundtrip_oracle(capsys):
    code, out, _ = run(capsys, "roundtrip", "--scenario", "office", "--translator", "oracle",
                       "--reverse", "oracle", "--n", "20")
    assert code == 0
    assert last_json(out)["n"] == 20


def test_train_pipeline(capsys):
    base = ["--scenario", "office", "--seed", "7"]
    code, out, _ = run(capsys, "train-e2e", *base, "--set", "training.e2e.epochs=20",
                       "--set", "training.pairs.n_train=40", "--set", "training.pairs.n_heldout=10")
    assert code == 0
    e2e_path = os.path.join(last_json(out)["out"], "translator_e2e.json")
    code, out, _ = run(capsys, "evaluate", "--scenario", "office", "--translator", e2e_path)
    assert code == 0 and "causation" in last_json(out)["losses"]

    code, out, _ = run(capsys, "train-ae", *base, *FAST_AE)
    assert code == 0
    ae_dir = last_json(out)["out"]
    code, out, _ = run(capsys, "train-latent", *base, *FAST_AE, "--ae-dir", ae_dir,
                       "--set", "training.latent.epochs=20")
    assert code == 0
    summary = last_json(out)
    assert summary["config"] == "latent" and os.path.exists(summary["translator"])


def test_usage_errors_are_json(capsys):
    code, _, err = run(capsys, "simulate", "--scenario", "office")
    assert code == 2 and json.loads(err)["error"] == "usage"
    code, _, err = run(capsys, "nope")
    assert code == 2 and json.loads(err)["error"] == "usage"
    code, _, err = run(capsys, "simulate", "--scenario", "office", "--seed", "1", "--set", "x")
    assert code == 2 and json.loads(err)["error"] == "usage"


def test_unknown_scenario_and_translator(capsys):
    code, _, err = run(capsys, "simulate", "--scenario", "no_such", "--seed", "1")
    assert code == 1 and "message" in json.loads(err)
    code, _, err = run(capsys, "evaluate", "--scenario", "office", "--translator", "missing.json")
    assert code == 1 and json.loads(err)["error"] == "io"
    code, _, err = run(capsys, "simulate", "--scenario", "office", "--seed", "1",
                       "--set", "plant.dt=-1")
    assert code == 1 and json.loads(err)


def test_serve_subprocess(tmp_path):
    proc = subprocess.Popen(
        [sys.executable, "-m", "m2mlab.cli", "serve", "--scenario", "office", "--listen",
         "127.0.0.1:0", "--translator", "oracle", "--registry", str(tmp_path / "reg")],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        registered = json.loads(proc.stdout.readline())
        listening = json.loads(proc.stdout.readline())
        host, port = listening["listening"].rsplit(":", 1)
        with socket.create_connection((host, int(port)), timeout=10) as sock:
            f = sock.makefile("rwb")
            f.write(json.dumps({"op": "translate", "translator_id": registered["registered"],
                                "message": SAMPLE_A}).encode() + b"\n")
            f.flush()
            assert json.loads(f.readline())["status"] == "ok"
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=10) == 0
        assert "stopped" in proc.stdout.read()
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()
    assert list((tmp_path / "reg").glob("*.json"))


def test_serve_port_busy(capsys):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen()
        port = s.getsockname()[1]
        code, _, err = run(capsys, "serve", "--scenario", "office", "--listen", f"127.0.0.1:{port}")
    assert code == 1 and json.loads(err)["error"] == "startup"
