import json
import subprocess
import sys

import pytest

from qsdlab.cli import RunConfig, run


def report(capsys, argv):
    code = run(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.startswith("{") else out)


def test_decay(capsys):
    code, rep = report(capsys, ["decay", "--trunc", "500,1000,2000"])
    assert code == 0
    assert rep["command"] == "decay"
    assert abs(rep["result"]["extrapolated"] - 1.0) <= 1e-8
    assert rep["config"]["trunc"] == [500, 1000, 2000]


def test_validate(capsys):
    code, rep = report(capsys, ["validate", "--trunc", "100"])
    assert code == 0
    r = rep["result"]
    assert r["conservative"] and r["stable"] and r["irreducible_C"]


def test_lcd_at_time_zero(capsys):
    code, rep = report(capsys, ["lcd", "--t", "0", "--i", "3", "--trunc", "50"])
    assert code == 0
    d = rep["result"]["distributions"][0]
    p = dict(zip(d["states"], d["probabilities"]))
    assert p[3] == 1.0 and sum(p.values()) == 1.0


def test_kappa_oracle(capsys):
    model = json.dumps({"model": "random_walk_z", "p": 1.0, "q": 1.5})
    code, rep = report(capsys, ["kappa", "--model", model, "--source", "oracle", "--i", "0", "--j", "0"])
    assert code == 0
    assert abs(rep["result"]["fit"]["kappa"] - 0.5) <= 0.02


def test_csv_output(capsys):
    code, out = report(capsys, ["lcd", "--t", "1,2", "--trunc", "100", "--format", "csv"])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "t,j,p" and len(lines) == 201


def test_csv_refused_for_scalar_commands(capsys):
    assert run(["decay", "--format", "csv"]) == 2


def test_out_file(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert run(["kernel", "--t", "0.5", "--trunc", "50", "--out", str(out)]) == 0
    assert capsys.readouterr().out == ""
    rep = json.loads(out.read_text())
    assert rep["result"]["kernels"][0]["t"] == 0.5


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trunc": [100, 200], "model": {"model": "killed_mm1", "p": 2.0, "q": 3.0}}))
    code, rep = report(capsys, ["decay", "--config", str(cfg)])
    assert code == 0 and rep["config"]["trunc"] == [100, 200]
    assert rep["config"]["model"]["p"] == 2.0
    code, rep = report(capsys, ["decay", "--config", str(cfg), "--trunc", "300,600"])
    assert rep["config"]["trunc"] == [300, 600]


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"truncation": 5}))
    assert run(["decay", "--config", str(cfg)]) == 2


def test_config_round_trip_is_byte_identical():
    cfg = RunConfig(trunc=[1000, 2000], t=[0.5, 1.0], j="survival", window=[100.0, 400.0], lam=1.0)
    text = cfg.to_json()
    assert RunConfig.from_json(text).to_json() == text
    assert RunConfig.from_json(RunConfig().to_json()).to_json() == RunConfig().to_json()


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["decay", "--trunc", "x"],
        ["decay", "--model", '{"model": "killed_mm1", "p": -1, "q": 4}'],
        ["decay", "--trunc", "500,500"],
        ["kappa", "--window", "1,2,3"],
        ["simulate", "--model", '{"model": "random_walk_z", "p": 1, "q": 1}', "--n", "10"],
        ["decay", "--model", "{not json"],
    ],
)
def test_usage_errors(argv, capsys):
    assert run(argv) == 2


def test_computation_failure(capsys):
    assert run(["simulate", "--t", "50", "--n", "2000"]) == 1
    assert "guard" in capsys.readouterr().err


def test_simulate(capsys):
    code, rep = report(capsys, ["simulate", "--i", "3", "--t", "0.5,1", "--n", "3000", "--seed", "7"])
    assert code == 0
    r = rep["result"]
    assert r["survival"]["seed"] == 7 and r["conditional"]["generator"] == "Philox4x64-10"


def test_entry_point_module():
    res = subprocess.run([sys.executable, "-m", "qsdlab", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout


@pytest.mark.slow
def test_verify_mm1_suite(tmp_path, capsys):
    out = tmp_path / "v.json"
    assert run(["verify", "--suite", "mm1", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert sum(line.startswith("[PASS]") for line in lines) == 6
    assert json.loads(out.read_text())["result"]["passed"] is True
