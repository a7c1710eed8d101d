from __future__ import annotations

import csv
import json

import pytest

from desitterlab.cli import main


def run(capsys, *argv, environ=None):
    code = main(list(argv), environ or {})
    out, err = capsys.readouterr()
    return code, out, err


def test_regcheck_prints_threshold(capsys, tmp_path):
    code, out, _ = run(capsys, "regcheck", "threshold_real_principal(stilde=2)", "--out", str(tmp_path))
    assert code == 0
    assert "s > n/2 + 7/2" in out
    data = json.loads((tmp_path / "regcheck.json").read_text())
    assert json.dumps(data).count("s > n/2 + 7/2") >= 1
    assert (tmp_path / "manifest.json").exists()


def test_regcheck_bad_query_fails(capsys, tmp_path):
    code, _, err = run(capsys, "regcheck", "frobnicate()", "--out", str(tmp_path))
    assert code != 0
    assert err.startswith("error[")


def test_resonances_leading(capsys, tmp_path):
    code, out, _ = run(capsys, "resonances", "--lambda", "0", "--n", "4", "--out", str(tmp_path))
    assert code == 0
    assert "leading resonances: 0, -i" in out
    for name in ("lattice.json", "lattice.csv", "lattice.png"):
        assert (tmp_path / name).stat().st_size > 0


@pytest.mark.parametrize("argv", [("solve", "--set", "grid.n_r=2"), ("solve", "--set", "colour=1"),
                                  ("resonances", "--set", "novalue")])
def test_config_errors_exit_two(capsys, tmp_path, argv):
    code, _, err = run(capsys, *argv, "--out", str(tmp_path))
    assert code == 2
    assert err.startswith("error[config]")
    assert len(err.strip().splitlines()) == 1


def test_layering_env_then_flags(capsys, tmp_path):
    env = {"DSLAB_LAMBDA": "2", "DSLAB_N_MAX": "3", "DSLAB_UNRELATED": "x", "HOME": "/tmp"}
    code, out, _ = run(capsys, "resonances", "--out", str(tmp_path / "a"), environ=env)
    assert code == 0
    cfg = json.loads((tmp_path / "a" / "manifest.json").read_text())["config"]
    assert cfg["lambda"] == 2.0 and cfg["N_max"] == 3
    run(capsys, "resonances", "--out", str(tmp_path / "b"), "--set", "lambda=9/4", environ=env)
    cfg = json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]
    assert cfg["lambda"] == 2.25


def test_config_file_and_manifest_rerun(capsys, tmp_path):
    (tmp_path / "cfg.yaml").write_text("lambda: 2\nN_max: 4\n")
    assert run(capsys, "resonances", "--config", str(tmp_path / "cfg.yaml"), "--out", str(tmp_path / "a"))[0] == 0
    first = (tmp_path / "a" / "lattice.json").read_bytes()
    code, _, _ = run(capsys, "resonances", "--config", str(tmp_path / "a" / "manifest.json"),
                     "--out", str(tmp_path / "b"))
    assert code == 0
    assert (tmp_path / "b" / "lattice.json").read_bytes() == first


def test_empty_sweep_writes_header_only(capsys, tmp_path):
    code, _, _ = run(capsys, "sweep", "--out", str(tmp_path))
    assert code == 0
    rows = list(csv.reader((tmp_path / "sweep.csv").open()))
    assert len(rows) == 1 and rows[0][:2] == ["value", "status"]


def test_sweep_over_lambda(capsys, tmp_path):
    cfg = {"command": "solve", "axis": "lambda", "values": ["0", "2"],
           "base": {"grid": {"n_r": 24, "t_end": 6.0}, "modes": [{"l": 0, "weight": 1.0}], "fit_window": [3, 6]}}
    (tmp_path / "sweep.json").write_text(json.dumps(cfg))
    code, _, _ = run(capsys, "sweep", "--config", str(tmp_path / "sweep.json"), "--out", str(tmp_path / "o"))
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "o" / "sweep.csv").open()))
    assert [r["status"] for r in rows] == ["ok", "ok"]
    assert [float(r["value"]) for r in rows] == [0.0, 2.0]


def test_small_solve(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", "--lambda", "2", "--set", "grid.n_r=24", "--set", "grid.t_end=6",
                       "--set", "fit_window=[3, 6]", "--out", str(tmp_path))
    assert code == 0
    assert "decay" in out
    assert (tmp_path / "probe.csv").read_text().startswith("t,")
    assert (tmp_path / "probe.png").exists()


def test_small_backward(capsys, tmp_path):
    code, out, _ = run(capsys, "backward", "--set", "threshold=1.0", "--out", str(tmp_path))
    assert code == 0
    summary = json.loads((tmp_path / "backward.json").read_text())
    assert summary["threshold"] == 1.0 and summary["max_error"] < 1e-2


def test_small_norms(capsys, tmp_path):
    code, out, _ = run(capsys, "norms", "--set", "reciprocal.samples=10", "--out", str(tmp_path))
    assert code == 0
    summary = json.loads((tmp_path / "norms.json").read_text())
    assert summary["plancherel_rel_error"] < 1e-8
    assert summary["reciprocal_holds"] == 10


def test_norms_short_window_trips_decay_gate(capsys, tmp_path):
    # x^beta e^{-x} below the threshold weight has not decayed at T = 20
    code, _, err = run(capsys, "norms", "--set", "T_values=[20, 30]", "--out", str(tmp_path))
    assert code == 1
    assert err.startswith("error[weight]")


def test_small_iterate(capsys, tmp_path):
    code, out, _ = run(capsys, "iterate", "--set", "grid.n_r=30", "--set", "grid.t_end=8",
                       "--set", "expansion.window=[4, 8]", "--out", str(tmp_path))
    assert code == 0
    rep = json.loads((tmp_path / "iteration.json").read_text())
    assert rep["converged"] and rep["final_residual"] <= rep["residual_bound"]
    assert (tmp_path / "deltas.png").exists()


def test_small_flow(capsys, tmp_path):
    code, out, _ = run(capsys, "flow", "--set", "samples_per_component=5", "--set", "trajectories=1",
                       "--out", str(tmp_path))
    assert code == 0
    scan = json.loads((tmp_path / "scan.json").read_text())
    assert scan["failures"] == 0
    assert (tmp_path / "trajectories.csv").read_text().startswith("trajectory,component,termination,s,")
