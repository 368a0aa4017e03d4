import csv
import json
import subprocess
import sys

import pytest

from accommodation import cli
from accommodation.corpus import read_corpus
from accommodation.models import ModelConfig
from accommodation.trainer import TrainConfig

FAST = ["--profile", "desk", "--max-epochs", "1"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def metrics_without_wall_time(path):
    return [line.rsplit(",", 1)[0] for line in path.read_text().splitlines()]


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("c") / "rs.corpus"
    assert run("gen-corpus", "--speaker", "RS", "--n", 10, "--seed", 7, "--out", path) == 0
    return path


@pytest.fixture(scope="module")
def one_epoch_run(tmp_path_factory, corpus_file):
    out = tmp_path_factory.mktemp("r") / "run"
    assert run("train", "--corpus", corpus_file, "--seed", 1, *FAST, "--out", out) == 0
    return out


# -- gen-corpus ------------------------------------------------------------------


def test_gen_corpus_header_and_split(tmp_path, capsys):
    out = tmp_path / "rs.corpus"
    assert run("gen-corpus", "--speaker", "RS", "--n", 100, "--seed", 7, "--out", out) == 0
    assert "train=64 val=16 test=20" in capsys.readouterr().out
    header = json.loads(out.read_text().splitlines()[0])
    assert header["seed"] == 7 and header["n"] == 100
    c = read_corpus(out)
    assert (len(c.split.train), len(c.split.val), len(c.split.test)) == (64, 16, 20)


def test_gen_corpus_idempotent(tmp_path):
    for name in ("a", "b"):
        assert run("gen-corpus", "--speaker", "S2", "--n", 8, "--seed", 3, "--out", tmp_path / name) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_gen_corpus_too_small(tmp_path, capsys):
    assert run("gen-corpus", "--speaker", "RS", "--n", 3, "--seed", 7, "--out", tmp_path / "x") == 1
    assert "split would be empty" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_gen_corpus_custom_speaker(tmp_path):
    out = tmp_path / "c.corpus"
    assert run("gen-corpus", "--speaker", "S9", "--lambda", 0.95, "--n", 6, "--seed", 1, "--out", out) == 0
    assert read_corpus(out).lam == 0.95
    assert run("gen-corpus", "--speaker", "S9", "--lambda", 2.0, "--n", 6, "--seed", 1, "--out", out) == 1
    assert run("gen-corpus", "--speaker", "XX", "--n", 6, "--seed", 1, "--out", out) == 1


def test_usage_errors_exit_1(tmp_path):
    assert run("gen-corpus", "--speaker", "RS") == 1
    assert run("no-such-command") == 1
    assert run("train", "--corpus", tmp_path / "c", "--out", tmp_path / "r", "--K", "eight") == 1


# -- train -----------------------------------------------------------------------


def test_one_epoch_run_directory(one_epoch_run):
    names = {p.name for p in one_epoch_run.iterdir()}
    assert names == {"config.json", "metrics.csv", "correctness.csv", "epoch-1.ckpt", "best.ckpt", "final.ckpt"}
    assert len(one_epoch_run.joinpath("metrics.csv").read_text().splitlines()) == 2
    corr = list(csv.DictReader(one_epoch_run.joinpath("correctness.csv").open()))
    assert [r["epoch"] for r in corr] == ["0", "1"] and corr[0]["speaker"] == "RS"
    snap = json.loads(one_epoch_run.joinpath("config.json").read_text())
    assert snap["model"]["hidden_width"] == 64 and snap["train"]["seed"] == 1


def test_train_rerun_identical_metrics(tmp_path, corpus_file, one_epoch_run):
    out = tmp_path / "again"
    assert run("train", "--corpus", corpus_file, "--seed", 1, *FAST, "--out", out) == 0
    assert metrics_without_wall_time(out / "metrics.csv") == metrics_without_wall_time(one_epoch_run / "metrics.csv")
    assert (out / "correctness.csv").read_bytes() == (one_epoch_run / "correctness.csv").read_bytes()


def test_train_refuses_non_empty_dir_without_force(tmp_path, corpus_file, capsys):
    out = tmp_path / "r"
    assert run("train", "--corpus", corpus_file, *FAST, "--out", out) == 0
    (out / "notes.txt").write_text("keep me")
    assert run("train", "--corpus", corpus_file, *FAST, "--out", out) == 2
    assert "--force" in capsys.readouterr().err
    assert run("train", "--corpus", corpus_file, *FAST, "--out", out, "--force") == 0
    assert (out / "notes.txt").read_text() == "keep me"


def test_train_missing_corpus_is_runtime_failure(tmp_path):
    assert run("train", "--corpus", tmp_path / "nope", *FAST, "--out", tmp_path / "r") == 2


def test_train_bad_values_are_usage_errors(tmp_path, corpus_file):
    assert run("train", "--corpus", corpus_file, "--profile", "huge", "--out", tmp_path / "a") == 1
    assert run("train", "--corpus", corpus_file, *FAST, "--K", 0, "--out", tmp_path / "b") == 1
    assert run("train", "--corpus", corpus_file, "--agent", "ZZ", *FAST, "--out", tmp_path / "c") == 1


def test_config_file_merging(tmp_path, corpus_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"profile": "desk", "max_epochs": 3, "lr_g": 0.002, "seed": 4}))
    out = tmp_path / "r"
    assert run("train", "--corpus", corpus_file, "--config", cfg, "--max-epochs", 1, "--out", out) == 0
    snap = json.loads((out / "config.json").read_text())
    assert snap["train"]["max_epochs"] == 1 and snap["train"]["lr_g"] == 0.002 and snap["train"]["seed"] == 4


def test_config_file_unknown_key_rejected(tmp_path, corpus_file, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"profile": "desk", "learning_rate": 1}))
    assert run("train", "--corpus", corpus_file, "--config", cfg, "--out", tmp_path / "r") == 1
    assert "learning_rate" in capsys.readouterr().err
    cfg.write_text("[1, 2]")
    assert run("train", "--corpus", corpus_file, "--config", cfg, "--out", tmp_path / "r") == 1


def test_help_lists_every_key_with_default(capsys):
    assert run("train", "--help") == 0
    text = capsys.readouterr().out
    from dataclasses import fields

    for f in list(fields(TrainConfig)) + list(fields(ModelConfig)):
        if f.name == "seed":
            assert "--seed" in text
            continue
        assert f"--{f.name.replace('_', '-')}" in text, f.name
    assert text.count("default:") >= len(fields(TrainConfig)) + len(fields(ModelConfig)) - 1


# -- probe -----------------------------------------------------------------------


def test_probe_on_one_epoch_run(tmp_path, corpus_file):
    out = tmp_path / "r"
    assert run("train", "--corpus", corpus_file, "--seed", 2, *FAST, "--out", out) == 0
    assert run("probe", "--run", out, "--offsets-per-frame", 2) == 0
    rows = list(csv.reader((out / "probes" / "offset_bins.csv").open()))
    first = [r[1:] for r in rows[1:] if r[0] == "epoch-1"]
    final = [r[1:] for r in rows[1:] if r[0] == "final"]
    assert len(first) == 10 and first == final
    summary = json.loads((out / "probes" / "summary.json").read_text())
    assert summary["nearest_bin_error_epoch1"] == summary["nearest_bin_error_final"]
    assert "articulatory_rmse" in summary
    before = (out / "probes" / "offset_raw.csv").read_bytes()
    assert run("probe", "--run", out, "--offsets-per-frame", 2) == 0
    assert (out / "probes" / "offset_raw.csv").read_bytes() == before


def test_probe_missing_checkpoint(tmp_path, corpus_file):
    out = tmp_path / "r"
    assert run("train", "--corpus", corpus_file, *FAST, "--out", out) == 0
    (out / "epoch-1.ckpt").unlink()
    assert run("probe", "--run", out) == 2
    assert run("probe", "--run", tmp_path / "nothing") == 2


# -- report ----------------------------------------------------------------------


def test_report_zero_runs_header_only(tmp_path):
    assert run("report", "--out", tmp_path / "r.csv") == 0
    assert (tmp_path / "r.csv").read_text() == "speaker,seed,epoch,rmse_forward,rmse_inverse,train_loss_f,train_loss_g,wall_time_s\n"


def test_report_rows(tmp_path, one_epoch_run, capsys):
    assert run("report", one_epoch_run, one_epoch_run) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and lines[1].startswith("RS,1,1,")
    assert run("report", tmp_path / "missing") == 2


# -- matrix ----------------------------------------------------------------------


def test_matrix_single_cell(tmp_path):
    out = tmp_path / "m"
    code = run("matrix", "--speakers", "S1", "--seeds", 5, "--n", 10, *FAST, "--offsets-per-frame", 1, "--out", out)
    assert code == 0
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert len(rows) == 1 and rows[0]["speaker"] == "S1" and rows[0]["seed"] == "5" and rows[0]["status"] == "ok"
    assert (out / "corpora" / "S1.corpus").exists() and (out / "S1-seed5" / "probes" / "summary.json").exists()


def test_matrix_rows_and_partial_failure(tmp_path, capsys):
    out = tmp_path / "m"
    (out / "RS-seed2").mkdir(parents=True)
    (out / "RS-seed2" / "junk").write_text("x")
    code = run("matrix", "--speakers", "RS", "--seeds", 1, 2, "--n", 8, *FAST, "--offsets-per-frame", 1,
               "--out", out, "--jobs", 2)
    assert code == 2
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert [(r["seed"], r["status"] == "ok") for r in rows] == [("1", True), ("2", False)]
    assert "FAILED RS seed 2" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "accommodation", "report"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("speaker,seed,epoch")
    proc = subprocess.run([sys.executable, "-m", "accommodation"], capture_output=True, text=True)
    assert proc.returncode == 1
