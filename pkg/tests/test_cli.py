import hashlib
import json

import pandas as pd
import pytest

from bparhmm import cli
from bparhmm.cluster import parse_newick


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("synth", "--seed", 2, "--two-group", "--n-series", 12, "--length", 150,
               "--planted", "--out", out) == 0
    assert run("fit", "--data", out / "data", "--seed", 1, "--sweeps", 60, "--out", out) == 0
    return out


def _digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_fit_outputs(pipeline):
    for name in ("fit.json", "fit_raw.json", "trace.csv"):
        assert (pipeline / name).exists()
    doc = json.loads((pipeline / "fit.json").read_text())
    assert doc["format"] == 1 and doc["kind"] == "model-fit"
    trace = pd.read_csv(pipeline / "trace.csv")
    assert list(trace.columns) == ["sweep", "loglik", "K"] and len(trace) == 60


def test_downstream_stages(pipeline, tmp_path):
    data = pipeline / "data"
    before = _digest(pipeline)
    assert run("distances", "--fit", pipeline / "fit.json", "--out", tmp_path) == 0
    assert run("embed", "--distances", tmp_path / "distance_likelihood.json", "-K", 3, "--out", tmp_path) == 0
    assert run("embed", "--kind", "stationary", "--fit", pipeline / "fit.json", "--out", tmp_path) == 0
    assert run("cluster", "--distances", tmp_path / "distance_viterbi.json", "--data", data,
               "--fit", pipeline / "fit.json", "--out", tmp_path) == 0
    assert run("predict", "--fit", pipeline / "fit.json", "--data", data, "--seed", 0,
               "--models", "ridge", "--k-grid", "5,10", "--out", tmp_path) == 0
    assert run("prune", "--fit", pipeline / "fit_raw.json", "--data", data, "--out", tmp_path) == 0
    assert run("score-recovery", "--fit", pipeline / "fit.json", "--truth", pipeline / "truth.json",
               "--out", tmp_path) == 0
    parse_newick((tmp_path / "dendrogram_viterbi.nwk").read_text())
    table = pd.read_csv(tmp_path / "prediction.csv")
    assert table["construct"].tolist() == ["planted", "noise"]
    assert "HMM-SV_rho" in table.columns
    assert (tmp_path / "fit.json").read_bytes() == (pipeline / "fit.json").read_bytes()
    assert _digest(pipeline) == before  # inputs untouched


def test_missing_data_dir(tmp_path, capsys):
    assert run("fit", "--data", tmp_path / "absent", "--seed", 0, "--out", tmp_path) == 2
    assert str(tmp_path / "absent") in capsys.readouterr().err


def test_embed_k_too_large(pipeline, tmp_path, capsys):
    run("distances", "--fit", pipeline / "fit.json", "--measure", "viterbi", "--out", tmp_path)
    assert run("embed", "--distances", tmp_path / "distance_viterbi.json", "-K", 13, "--out", tmp_path) == 2
    assert "K must be" in capsys.readouterr().err


def test_wrong_artifact_kind(pipeline, tmp_path):
    assert run("cluster", "--distances", pipeline / "fit.json", "--out", tmp_path) == 2


def test_usage_errors(tmp_path):
    assert run("fit", "--out", tmp_path, "--seed", 0) == 2  # no data dir
    assert run("bogus") == 2
    assert run("synth", "--out", tmp_path) == 2  # seed mandatory


def test_runtime_failure_exit_code(pipeline, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("diverged")
    monkeypatch.setattr(cli, "fit_model", boom)
    assert run("fit", "--data", pipeline / "data", "--seed", 0, "--out", tmp_path) == 1


def test_config_file_and_override(tmp_path, monkeypatch):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nseed = 4\n[synth]\nn_series = 3\nlength = 40\n")
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env-out"))
    assert run("synth", "--config", cfg, "--length", 30) == 0
    files = sorted((tmp_path / "env-out" / "data").glob("s*.csv"))
    assert len(files) == 3
    assert len(files[0].read_text().splitlines()) == 31
    bad = tmp_path / "bad.ini"
    bad.write_text("[synth]\nn_series = many\n")
    assert run("synth", "--config", bad, "--out", tmp_path) == 2


def test_threads_knob(tmp_path):
    assert run("synth", "--seed", 0, "--n-series", 2, "--length", 20, "--threads", 1, "--out", tmp_path) == 0
    assert run("synth", "--seed", 0, "--threads", 0, "--out", tmp_path) == 2
