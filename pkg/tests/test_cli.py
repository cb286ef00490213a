import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fgplab import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run_cli(tmp_path, cfg, command=None, extra=()):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = cli.main([command or cfg["command"], "--config", str(cfg_path), "--out", str(out), "--quiet", *extra])
    report = json.loads((out / "report.json").read_text()) if code == 0 else None
    return code, report, out


def shrink(cfg):
    cfg = dict(cfg)
    if "paths" in cfg:
        cfg["paths"] = 5
    if "decay" in cfg:
        cfg["decay"] = dict(cfg["decay"], paths=10, T="5y")
    if "variogram_csv" in cfg:
        cfg["variogram_csv"] = str(CONFIGS / cfg["variogram_csv"])
    return cfg


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_run(tmp_path, name):
    cfg = shrink(json.loads((CONFIGS / name).read_text()))
    code, report, out = run_cli(tmp_path, cfg)
    assert code == 0
    assert report["command"] == cfg["command"] and report["schema_version"] == "1.0"
    assert len(list(out.glob("*.csv"))) >= 1


def test_statarb_ls_report(tmp_path):
    code, report, out = run_cli(tmp_path, json.loads((CONFIGS / "statarb_ls.json").read_text()))
    assert code == 0
    rep = report["results"]["report"]
    assert rep["A"] == pytest.approx(0.026, abs=5e-5)
    assert rep["kappa_check"] == pytest.approx(1.54e5, rel=0.01)
    assert report["results"]["growth_at_kappa"] == pytest.approx(25.9155, abs=1e-4)
    curve = np.genfromtxt(out / "growth_curve.csv", delimiter=",", names=True)
    assert curve["growth"].max() == pytest.approx(rep["gamma_check"], rel=1e-3)


def test_statarb_ls_from_paths(tmp_path):
    cfg = {"market": {"gamma": [0.0, 0.0], "covariance": [[0.04, 0.0], [0.0, 0.04]], "L0": [0, 0]},
           "grid": {"horizon": "0.1y", "dt": "1e-4y"}, "paths": 10, "seed": 1, "fast_lag": "1e-4y",
           "slow_lag": "3e-3y", "generating_function": {"name": "diversity", "p": 0.5}}
    code, report, _ = run_cli(tmp_path, cfg, "statarb-ls")
    assert code == 0
    assert report["results"]["inputs"]["provenance"] == "estimated"
    assert np.isfinite(report["results"]["A_standard_error"])


def test_verify_linear_is_exact(tmp_path):
    code, report, _ = run_cli(tmp_path, json.loads((CONFIGS / "verify_linear.json").read_text()))
    assert code == 0
    res = report["results"]
    assert res["exact"] and res["passed"] and res["max_abs_residual"] < 1e-10


def test_verify_master_on_ingested_prices(tmp_path):
    rng = np.random.default_rng(0)
    prices = np.exp(np.cumsum(rng.normal(0, 0.01, size=(300, 2)), axis=0))
    rows = "\n".join(f"{60 * i},{a},{b}" for i, (a, b) in enumerate(prices))
    (tmp_path / "prices.csv").write_text("time,A,B\n" + rows + "\n")
    cfg = {"input_csv": "prices.csv", "generating_function": {"name": "linear", "p": [0.4, 0.6]}}
    code, report, out = run_cli(tmp_path, cfg, "verify-master")
    assert code == 0
    assert report["config"]["input_csv"] == str(tmp_path / "prices.csv")
    assert report["results"]["max_abs_residual"] < 1e-10
    assert report["seed"] is None


def test_missing_seed_is_a_validation_error(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "simulate.json").read_text())
    del cfg["seed"]
    code, _, _ = run_cli(tmp_path, cfg)
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["field"] == "seed" and err["error"] == "validation"


def test_seed_and_paths_overrides(tmp_path):
    cfg = json.loads((CONFIGS / "simulate.json").read_text())
    code, report, _ = run_cli(tmp_path, cfg, extra=("--seed", "9", "--paths", "3"))
    assert code == 0
    assert report["seed"] == 9 and report["results"]["n_paths"] == 3


@pytest.mark.parametrize("cfg, field", [
    ({"command": "simulate", "grid": {"horizon": "1y", "steps": 10}, "seed": 1}, "market"),
    ({"command": "simulate", "market": {"gamma": [0], "covariance": [[0.04]], "L0": [0]},
      "grid": {"horizon": "1y", "dt": 0.01}, "seed": 1}, "grid.dt"),
    ({"command": "statarb-ls", "inputs": {"a11": 0.1}}, "inputs.a22"),
    ({"command": "statarb-quad", "variogram": {"C": 0.04, "U": 1e-4, "B_fit": "1e-6y", "k": 0.4}}, "trade_interval"),
    ({"command": "scenario", "market": {"gamma": [0, 0], "covariance": [[0.04, 0], [0, 0]], "L0": [0, 0]},
      "grid": {"horizon": "1y", "steps": 10}, "seed": 1, "p": [0.5, 0.5]}, "market"),
    ({"command": "simulate", "market": {"gamma": [0], "covariance": [[0.04]], "L0": [0]},
      "grid": {"horizon": "1y", "steps": 10}, "seed": -1}, "seed"),
])
def test_invalid_configs_exit_2(tmp_path, capsys, cfg, field):
    code, _, _ = run_cli(tmp_path, cfg)
    assert code == 2
    assert json.loads(capsys.readouterr().err)["field"] == field


def test_command_mismatch(tmp_path, capsys):
    code, _, _ = run_cli(tmp_path, {"command": "simulate"}, "scenario")
    assert code == 2
    assert json.loads(capsys.readouterr().err)["field"] == "command"


def test_bad_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "config"
    assert cli.main(["simulate", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_numerical_failure_exits_3(tmp_path, capsys):
    (tmp_path / "prices.csv").write_text("time,A,B\n0,1.0,1.0\n60,0.1,1.0\n120,0.1,1.0\n")
    cfg = {"input_csv": "prices.csv", "generating_function": {"name": "linear", "p": [0.5, 0.5]},
           "numeraire": {"kind": "constant", "weights": [3.0, -2.0]}}
    code, _, _ = run_cli(tmp_path, cfg, "verify-master")
    assert code == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "numerical" and err["type"] == "BankruptcyError"


def test_module_entry_point(tmp_path):
    out = tmp_path / "out"
    proc = subprocess.run([sys.executable, "-m", "fgplab.cli", "statarb-ls", "--config",
                           str(CONFIGS / "statarb_ls.json"), "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "report.json" in proc.stdout
    assert (out / "growth_curve.csv").exists()
