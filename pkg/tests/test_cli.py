import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dtmaps.cli import main, stream_rng
from dtmaps.scoring import SCORE_COLUMNS


def run(tmp_path, command, config=None, *flags):
    argv = [command, "--out", str(tmp_path / "out")]
    if config is not None:
        tmp_path.mkdir(parents=True, exist_ok=True)
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    return main(argv + list(flags))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_streams_are_independent_and_reproducible():
    a = stream_rng(1, "fit").uniform(size=4)
    assert np.array_equal(a, stream_rng(1, "fit").uniform(size=4))
    assert not np.array_equal(a, stream_rng(1, "simulate").uniform(size=4))
    assert not np.array_equal(a, stream_rng(2, "fit").uniform(size=4))


def test_simulate_is_deterministic(tmp_path, capsys):
    cfg = {"simulate": {"n": 20}}
    assert run(tmp_path / "a", "simulate", cfg, "--seed", "3") == 0
    assert run(tmp_path / "b", "simulate", cfg, "--seed", "3") == 0
    a = (tmp_path / "a/out/dataset.csv").read_text()
    assert a == (tmp_path / "b/out/dataset.csv").read_text()
    assert read_csv(tmp_path / "a/out/dataset.csv")[0] == ["x1", "x2", "x3", "x4", "y"]
    assert "wrote" in capsys.readouterr().out


def test_simulate_respects_box(tmp_path):
    cfg = {"simulate": {"n": 50, "box_low": [-1, 0.5, -1, 1], "box_high": [1, 1, 1, 2]}}
    assert run(tmp_path, "simulate", cfg, "--seed", "4") == 0
    A = np.array(read_csv(tmp_path / "out/dataset.csv")[1:], dtype=float)
    assert np.all(A[:, :4] >= [-1, 0.5, -1, 1]) and np.all(A[:, :4] <= [1, 1, 1, 2])


def test_simulate_rejects_bad_box(tmp_path, capsys):
    cfg = {"simulate": {"n": 5, "box_low": [1, 0.5, -1, 1], "box_high": [0, 1, 1, 2]}}
    assert run(tmp_path, "simulate", cfg, "--seed", "4") == 2
    assert json.loads(capsys.readouterr().err)["problems"][0]["field"] == "simulate.box_low"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    assert run(root, "simulate", {"simulate": {"n": 60}}, "--seed", "0") == 0
    data = str(out / "dataset.csv")
    x_path = root / "x.csv"
    x_path.write_text("x1,x2,x3,x4\n1,1.5,-1,0.6\n-1,0.6,1,1.6\n")
    assert run(root, "fit", {"fit": {"data": data, "train": {"epochs": 5}}}, "--seed", "0",
               "--method", "parametric") == 0
    return root, out, data, str(x_path), str(out / "model.json")


def test_fit_is_deterministic(pipeline, tmp_path):
    root, out, data, _, model = pipeline
    assert run(tmp_path, "fit", {"fit": {"data": data, "train": {"epochs": 5}}}, "--seed", "0",
               "--method", "parametric") == 0
    assert (tmp_path / "out/model.json").read_text() == open(model).read()


def test_diagnose_outputs(pipeline):
    root, out, _, x, model = pipeline
    assert run(root, "diagnose", {"diagnose": {"model": model, "x": x}}) == 0
    curve = read_csv(out / "curve_0000.csv")
    assert curve[0] == ["alpha", "g_hat"] and len(curve) == 102
    lds_rows = read_csv(out / "lds.csv")
    assert lds_rows[0] == ["x_index", "lds"] and len(lds_rows) == 3


def test_recalibrate_outputs(pipeline):
    root, out, _, x, model = pipeline
    cfg = {"recalibrate": {"model": model, "x": x, "y_grid": {"lower": -3, "upper": 3, "n": 7}, "taus": [0.5]}}
    assert run(root, "recalibrate", cfg) == 0
    rows = read_csv(out / "recalibrated.csv")
    assert rows[0] == ["x_index", "y", "cdf", "pdf"] and len(rows) == 1 + 2 * 7
    cdf = np.array([float(r[2]) for r in rows[1:8]])
    assert np.all(np.diff(cdf) >= 0)
    assert read_csv(out / "quantiles.csv")[0] == ["x_index", "tau", "quantile"]


def test_score_schema(pipeline):
    root, out, data, _, model = pipeline
    assert run(root, "score", {"score": {"data": data, "model": model}}) == 0
    rows = read_csv(out / "scores.csv")
    assert tuple(rows[0]) == SCORE_COLUMNS
    assert [r[1] for r in rows[1:]] == ["base", "base", "parametric", "parametric"]


def test_convergence_true_rows_are_zero(tmp_path):
    cfg = {"convergence": {"n_grid": [5], "replicates": 2, "methods": ["parametric", "true"],
                           "parametric": {"epochs": 2}}}
    assert run(tmp_path, "convergence", cfg, "--seed", "1") == 0
    rows = read_csv(tmp_path / "out/convergence.csv")
    assert rows[0] == ["method", "N", "replicate", "test_point", "ise", "error"]
    assert all(float(r[4]) == 0.0 for r in rows[1:] if r[0] == "true")
    summary = read_csv(tmp_path / "out/convergence_summary.csv")
    assert summary[0] == ["method", "N", "test_point", "mean", "sd", "count"]


def test_tc_eval_small(tmp_path):
    cfg = {"tc_eval": {"n_storms": 40, "methods": ["parametric"], "parametric": {"epochs": 3}}}
    assert run(tmp_path, "tc-eval", cfg, "--seed", "0") == 0
    rows = read_csv(tmp_path / "out/tc_table.csv")
    assert tuple(rows[0]) == SCORE_COLUMNS
    report = json.loads((tmp_path / "out/tc_ingest.json").read_text())
    assert report["sequences"] > 0 and "Overall" in report["test_counts"]


def test_config_errors_are_collected(tmp_path, capsys):
    code = run(tmp_path, "fit", {"base": {"sd": -1}, "fit": {"train": {"lr": -1}}})
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == "error" and err["kind"] == "config"
    fields = {p["field"] for p in err["problems"]}
    assert {"seed", "method", "base.sd", "fit.data", "fit.train"} <= fields


def test_missing_seed_rejected(tmp_path, capsys):
    assert run(tmp_path, "simulate", {"simulate": {"n": 5}}) == 2
    assert json.loads(capsys.readouterr().err)["problems"][0]["field"] == "seed"


def test_unreadable_config(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--seed", "1"]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_runtime_error_is_json(tmp_path, capsys):
    bad = tmp_path / "model.json"
    bad.write_text("{}")
    x = tmp_path / "x.csv"
    x.write_text("x1\n0\n")
    assert run(tmp_path, "diagnose", {"diagnose": {"model": str(bad), "x": str(x)}}) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["kind"] == "ModelFormatError"


def test_out_directory_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("DTMAPS_OUT", str(tmp_path / "env"))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"out": str(tmp_path / "file"), "simulate": {"n": 3}}))
    assert main(["simulate", "--config", str(cfg), "--seed", "0"]) == 0
    assert (tmp_path / "env/dataset.csv").exists()
    monkeypatch.delenv("DTMAPS_OUT")
    assert main(["simulate", "--config", str(cfg), "--seed", "0"]) == 0
    assert (tmp_path / "file/dataset.csv").exists()


def test_console_entry_point_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dtmaps.cli", "simulate", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["kind"] == "config"
