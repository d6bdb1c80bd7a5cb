import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from satgnn.cli import main

MODEL_FLAGS = ["--d-model", "8", "--t-train", "3"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("generate", "--family", "SR", "--n-min", 3, "--n-max", 6, "--count", 30,
               "--seed", 1, "--out", root / "train") == 0
    assert run("generate", "--family", "SR", "--n-min", 5, "--n-max", 5, "--count", 10,
               "--seed", 2, "--out", root / "test") == 0
    assert run("train", "--data", root / "train", "--val", root / "test", "--epochs", 2,
               "--batch-size", 10, *MODEL_FLAGS, "--out", root / "run") == 0
    return root


def test_generate_outputs(workspace):
    rows = (workspace / "train" / "manifest.jsonl").read_text().splitlines()
    assert len(rows) == 30
    summary = json.loads((workspace / "train" / "summary.json").read_text())
    assert summary["instances"] == 30 and summary["sat"] == 15


def test_generate_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "--count", 8, "--n-max", 8, "--seed", 5, "--out", tmp_path / name) == 0
    for p in (tmp_path / "a").iterdir():
        if p.name != "summary.json":
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_stats(workspace, capsys):
    assert run("stats", "--data", workspace / "train", "--samples", 50) == 0
    out = capsys.readouterr().out
    assert "SAT%" in out and "50.0" in out


def test_train_outputs(workspace):
    assert (workspace / "run" / "model.npz").exists()
    rows = list(csv.DictReader(open(workspace / "run" / "metrics.csv")))
    assert len(rows) == 2


def test_solve_and_eval(workspace, capsys):
    assert run("solve", "--model", workspace / "run" / "model.npz", "--data", workspace / "test",
               "--max-iters", 10, "--out", workspace / "solve") == 0
    out = capsys.readouterr().out
    assert "Decision Accuracy" in out and "SAT Steps (Avg/Med)" in out
    assert run("eval", "--model", workspace / "run" / "model.npz", "--data", workspace / "test",
               "--max-iters", 10, "--samples", 2, "--out", workspace / "eval") == 0
    m = json.loads((workspace / "eval" / "summary.json").read_text())["metrics"]
    assert 0 <= m["decision_acc"] <= 1
    assert len(list(csv.DictReader(open(workspace / "eval" / "records.csv")))) == 10


def test_sweep(workspace):
    assert run("sweep", "--model", workspace / "run" / "model.npz", "--data", workspace / "test",
               "--iters", "5,10", "--samples", "1,2", "--out", workspace / "sweep") == 0
    rows = list(csv.reader(open(workspace / "sweep" / "grid.csv")))
    assert rows[0] == ["iters", "samples", "avg_gap", "sat_acc", "decision_acc"] and len(rows) == 5


def test_diffuse_train_then_load(workspace, capsys):
    common = ["--T", 8, "--gnn-steps", 2, "--steps", 4, "--max-calls", 10]
    assert run("diffuse", "--train-data", workspace / "train", "--epochs", 1, "--batch-size", 10,
               *MODEL_FLAGS, *common, "--data", workspace / "test", "--up",
               "--out", workspace / "diff") == 0
    out = capsys.readouterr().out
    assert "U.P. Acc." in out and "Total Rec. Calls" in out
    summary = json.loads((workspace / "diff" / "summary.json").read_text())
    assert set(summary["metrics"]) == {"diffusion", "up", "up_calls"}
    assert run("diffuse", "--model", workspace / "diff" / "denoiser.npz", *common,
               "--data", workspace / "test", "--out", workspace / "diff2") == 0
    first = list(csv.reader(open(workspace / "diff" / "records.csv")))
    second = list(csv.reader(open(workspace / "diff2" / "records.csv")))
    assert first == second


def test_sdp_random(tmp_path):
    assert run("sdp", "--random", 3, "--n-max", 6, "--iters", 200, "--k", 16, "--out", tmp_path) == 0
    rows = list(csv.DictReader(open(tmp_path / "sdp.csv")))
    assert len(rows) == 3 and all(0 < float(r["ratio"]) <= 1 for r in rows)


def test_sdp_rejects_wide_clauses(workspace, tmp_path, capsys):
    assert run("sdp", "--data", workspace / "train", "--out", tmp_path) == 2
    assert "width" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# dataset\ncount = 6\nn-max = 7\nsat_only = true\n")
    assert run("generate", "--config", cfg, "--out", tmp_path / "a") == 0
    s = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert s["instances"] == 3 and s["config"]["n_max"] == 7
    assert run("generate", "--config", cfg, "--count", 4, "--out", tmp_path / "b") == 0
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["instances"] == 2


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert run("generate", "--config", cfg, "--out", tmp_path / "x") == 2
    assert "unknown config key" in capsys.readouterr().err
    cfg.write_text("count = many\n")
    assert run("generate", "--config", cfg, "--out", tmp_path / "x") == 2


def test_empty_dataset_exits_nonzero(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    (tmp_path / "empty" / "manifest.jsonl").write_text("")
    assert run("train", "--data", tmp_path / "empty", "--out", tmp_path / "r") != 0
    assert "empty" in capsys.readouterr().err


def test_missing_checkpoint(tmp_path, workspace):
    assert run("eval", "--model", tmp_path / "nope.npz", "--data", workspace / "test",
               "--out", tmp_path / "e") == 2


def test_tampered_checkpoint(workspace, tmp_path, capsys):
    src = workspace / "run" / "model.npz"
    with np.load(src) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(arrays["__meta__"].tobytes())
    meta["config"]["model"]["t_train"] = 7
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    bad = tmp_path / "bad.npz"
    bad.write_bytes(buf.getvalue())
    assert run("eval", "--model", bad, "--data", workspace / "test", "--out", tmp_path / "e") == 2
    assert "hash" in capsys.readouterr().err


def test_dimacs_input(tmp_path, workspace, capsys):
    p = tmp_path / "x.cnf"
    p.write_text("c tiny\np cnf 2 2\n1 2 0\n-1 0\n")
    assert run("eval", "--model", workspace / "run" / "model.npz", "--data", p,
               "--max-iters", 5, "--out", tmp_path / "e") == 0
    p.write_text("p cnf 2 1\n1 3 0\n")
    assert run("eval", "--model", workspace / "run" / "model.npz", "--data", p,
               "--out", tmp_path / "e") == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "satgnn", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "generate" in out.stdout
