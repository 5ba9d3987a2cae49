import csv
import json

import pytest

from editloop import cli
from editloop.arith import check_equation, tokenize

TINY = ["--d-model", "8", "--d-embedding", "8", "--batch-size", "16", "--max-epochs", "2"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert run("gen", "--task", "aes", "--n", 10, "--l", 4, "--d", 120, "--seed", 1, "--out", out) == 0
    return out


def test_gen_layout_and_determinism(tmp_path, dataset):
    sizes = {name: len((dataset / f"{name}.jsonl").read_text().splitlines()) for name in ("train", "valid", "test")}
    assert sizes == {"train": 84, "valid": 18, "test": 18}
    rec = json.loads((dataset / "train.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"src", "tgt"} and check_equation(tokenize(rec["tgt"]))
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert manifest["params"]["n"] == 10 and manifest["version"]
    again = tmp_path / "again"
    run("gen", "--task", "aes", "--n", 10, "--l", 4, "--d", 120, "--seed", 1, "--out", again)
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"):
        assert (dataset / name).read_bytes() == (again / name).read_bytes()


def test_gen_full_size(tmp_path):
    out = tmp_path / "aor"
    assert run("gen", "--task", "aor", "--n", 10, "--l", 5, "--d", 10000, "--seed", 1, "--out", out) == 0
    sizes = [len((out / f"{n}.jsonl").read_text().splitlines()) for n in ("train", "valid", "test")]
    assert sizes == [7000, 1500, 1500]


def test_config_file_and_env(tmp_path, monkeypatch):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# gen settings\ntask = aec\nn = 10\nl = 4\nd = 50\nseed = 3\n")
    monkeypatch.setenv("EDITLOOP_D", "40")
    out = tmp_path / "ds"
    assert run("gen", "--config", cfg, "--out", out) == 0
    assert json.loads((out / "manifest.json").read_text())["params"]["d"] == 40
    out2 = tmp_path / "ds2"
    assert run("gen", "--config", cfg, "--d", 30, "--out", out2) == 0
    assert json.loads((out2 / "manifest.json").read_text())["params"]["d"] == 30


def test_exit_codes(tmp_path, capsys):
    assert run("gen", "--task", "aor", "--n", 1, "--l", 4, "--d", 3, "--out", tmp_path / "x") == cli.EXIT_CONFIG
    assert run("gen", "--task", "aor", "--n", 2, "--l", 3, "--d", 50, "--max-attempts", 100,
               "--out", tmp_path / "y") == cli.EXIT_DATA
    assert run("train", "--data", tmp_path / "missing", "--out", tmp_path / "r") == cli.EXIT_DATA
    assert run("gen", "--task", "aor", "--n", 5) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_trace_command(tmp_path, dataset):
    out = tmp_path / "trace.jsonl"
    assert run("trace", "--task", "aes", "--in", dataset / "test.jsonl", "--out", out) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 18
    for r in recs:
        assert r["actions"][-1] == "<done> <done> <done>" and len(r["states"]) == len(r["actions"])
    assert run("trace", "--in", dataset / "test.jsonl", "--out", out, "--random-order") == 0


def test_train_infer_eval(tmp_path, dataset, capsys):
    rundir = tmp_path / "run"
    assert run("train", "--data", dataset, "--out", rundir, "--method", "recurrence", "--mode", "online", *TINY) == 0
    for name in ("manifest.cfg", "metrics.csv", "best.ckpt", "last.ckpt", "summary.json"):
        assert (rundir / name).exists()
    rows = list(csv.DictReader((rundir / "metrics.csv").open()))
    assert [r["split"] for r in rows] == ["valid", "test", "valid", "test"]

    capsys.readouterr()
    assert run("infer", "--model", rundir / "best.ckpt", "--input", "1 + ( 2 + 3 ) == 6", "--max-iters", 2) == 0
    shown = capsys.readouterr().out
    assert "step 1: action" in shown and "final" in shown
    assert run("infer", "--task", "aor", "--model", rundir / "best.ckpt", "--input", "1") == cli.EXIT_CONFIG

    preds = tmp_path / "preds.txt"
    assert run("infer", "--model", rundir / "best.ckpt", "--data", dataset / "test", "--out", preds) == 0
    assert len(preds.read_text().splitlines()) == 18
    assert run("eval", "--task", "aes", "--pred", preds, "--data", dataset / "test") == 0
    summary = json.loads((tmp_path / "preds.txt.summary.json").read_text())
    assert summary["n"] == 18 and set(summary["primary"]) == {"seq_acc"}


def test_train_reproducible_from_manifest(tmp_path, dataset):
    a = tmp_path / "a"
    assert run("train", "--data", dataset, "--out", a, "--method", "tagging", "--mode", "offline", *TINY) == 0
    b = tmp_path / "b"
    assert run("train", "--config", a / "manifest.cfg", "--out", b) == 0
    assert (a / "best.ckpt").read_bytes() == (b / "best.ckpt").read_bytes()
    assert (a / "last.ckpt").read_bytes() == (b / "last.ckpt").read_bytes()


def test_eval_oracle_predictions(tmp_path, dataset):
    preds = tmp_path / "gold.txt"
    tgts = [json.loads(line)["tgt"] for line in (dataset / "test.jsonl").read_text().splitlines()]
    preds.write_text("\n".join(tgts) + "\n")
    assert run("eval", "--pred", preds, "--data", dataset / "test", "--summary", tmp_path / "s.json") == 0
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["token_acc"] == s["seq_acc"] == s["eq_acc"] == 1.0
    preds.write_text("\n".join(tgts[:3]) + "\n")
    assert run("eval", "--pred", preds, "--data", dataset / "test") == cli.EXIT_DATA


def test_sweep_with_failed_cell(tmp_path):
    out = tmp_path / "sweep"
    code = run("sweep", "--task", "aor", "--axis", "n", "--values", "1,10", "--l", 4, "--d", 60,
               "--combos", "recurrence:online,end2end:offline", "--out", out, *TINY)
    assert code == 0
    rows = list(csv.DictReader((out / "results.csv").open()))
    assert [(r["value"], r["method"], r["status"]) for r in rows] == [
        ("1", "recurrence", "failed"), ("1", "end2end", "failed"),
        ("10", "recurrence", "ok"), ("10", "end2end", "ok"),
    ]
    assert "N >= 2" in rows[0]["error"]
    assert float(rows[2]["seq_acc"]) >= 0.0


def test_one_cell_sweep_equals_single_run(tmp_path):
    sweep = tmp_path / "sweep"
    assert run("sweep", "--task", "aec", "--axis", "d", "--values", "60", "--n", 10, "--l", 4, "--seed", 2,
               "--out", sweep, *TINY) == 0
    data = tmp_path / "data"
    run("gen", "--task", "aec", "--n", 10, "--l", 4, "--d", 60, "--seed", 2, "--out", data)
    single = tmp_path / "single"
    assert run("train", "--data", data, "--out", single, "--seed", 2, *TINY) == 0
    cell = sweep / "d=60" / "recurrence_online"
    assert (cell / "best.ckpt").read_bytes() == (single / "best.ckpt").read_bytes()
    row = next(csv.DictReader((sweep / "results.csv").open()))
    test = json.loads((single / "summary.json").read_text())["test"]
    assert float(row["seq_acc"]) == pytest.approx(test["seq_acc"])
