import json
import subprocess
import sys

import numpy as np
import pytest

from caphev import cli
from caphev.config import ScenarioConfig, config_to_dict
from caphev.sim import SafetyViolation


@pytest.fixture
def small_config(tmp_path):
    d = config_to_dict(ScenarioConfig(duration=150.0, warmup=10.0))
    path = tmp_path / "small.json"
    path.write_text(json.dumps(d))
    return path


def test_run_writes_outputs(small_config, tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.main(["run", "--config", str(small_config), "--scenario", "corridor",
                     "--demand", "light", "--seed", "2", "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seed"] == 2 and summary["config"]["demand"] == "light"
    for name in ("trajectory.csv", "schedule.csv", "speed_profile.csv"):
        assert (out / name).exists()
    assert "OK" in capsys.readouterr().out


def test_sweep_writes_comparison(small_config, tmp_path):
    out = tmp_path / "sweep"
    code = cli.main(["sweep", "--config", str(small_config), "--demand", "light", "--seed", "1",
                     "--out", str(out)])
    assert code == 0
    rows = json.loads((out / "comparison.json").read_text())
    assert {r["treatment"] for r in rows} == {"isolated", "corridor"}
    assert (out / "baseline" / "light" / "seed1" / "summary.json").exists()
    assert (out / "comparison.csv").read_text().startswith("demand,seed,treatment,economy")


def test_safety_violation_gives_nonzero_exit(small_config, tmp_path, monkeypatch):
    def boom(cfg):
        raise SafetyViolation("vehicle 2 too close")
    monkeypatch.setattr(cli, "run_scenario", boom)
    assert cli.main(["run", "--config", str(small_config), "--out", str(tmp_path / "x")]) == 1


def test_bad_config_gives_usage_exit(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": "nonsense"}))
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_build_table(tmp_path):
    path = tmp_path / "t.npz"
    assert cli.main(["build-table", "--out", str(path)]) == 0
    with np.load(path) as data:
        assert data["engine"].ndim == 4


def test_verify_passes_and_writes_json(tmp_path):
    out = tmp_path / "v.json"
    assert cli.main(["verify", "--out", str(out)]) == 0
    results = json.loads(out.read_text())
    assert results and all(r["passed"] for r in results)


def test_module_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "caphev", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("run", "sweep", "build-table", "verify"):
        assert cmd in proc.stdout
