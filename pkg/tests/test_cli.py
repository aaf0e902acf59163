import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from beable import cli
from beable.exceptions import NumericalError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _run(*argv):
    return cli.run_command([str(a) for a in argv])


@pytest.mark.parametrize("name", ["particle", "epr", "measurement", "ergodic", "rabi"])
def test_validate_shipped_configs(name, tmp_path):
    assert _run("validate", "--config", CONFIGS / f"{name}.json", "--output", tmp_path) == 0
    report = json.loads((tmp_path / "validate.json").read_text())
    assert report["pass"] and all(c["pass"] for c in report["checks"])


def test_epr_frequencies(tmp_path, capsys):
    assert _run("epr", "--theta", math.pi / 4, "--trajectories", 4000, "--seed", 1,
                "--output", tmp_path) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    for row in summary["outcomes"].values():
        assert row["probability"] == pytest.approx(0.25)
        assert abs(row["frequency"] - 0.25) < 3 * math.sqrt(0.25 * 0.75 / 4000)
    assert (tmp_path / "events.csv").exists() and (tmp_path / "occupancy.csv").exists()
    assert "++" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path, monkeypatch):
    outs = []
    for k, threads in enumerate(("1", "4")):
        monkeypatch.setenv("BEABLE_THREADS", threads)
        out = tmp_path / str(k)
        assert _run("simulate", "--config", CONFIGS / "rabi.json", "--trajectories", 3000,
                    "--output", out) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]


def test_json_format_and_rates(tmp_path):
    assert _run("simulate", "--config", CONFIGS / "rabi.json", "--trajectories", 100,
                "--format", "json", "--output", tmp_path) == 0
    doc = json.loads((tmp_path / "trajectories.json").read_text())
    assert set(doc) == {"events", "occupancy"}
    assert _run("rates", "--config", CONFIGS / "rabi.json", "--time", 0.4,
                "--output", tmp_path) == 0
    lines = (tmp_path / "rates.csv").read_text().splitlines()
    assert lines[0] == "to_index,from_index,rate" and len(lines) == 2


def test_exit_code_config_errors(tmp_path):
    assert _run("epr", "--bogus") == 2
    assert _run("epr", "--theta", 3.0) == 2
    assert _run("particle", "--config", CONFIGS / "epr.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schemaVersion": 9, "scenario": "epr"}))
    assert _run("epr", "--config", bad) == 2
    assert _run("epr", "--config", tmp_path / "missing.json") == 2


def test_exit_code_numerical(monkeypatch):
    def fail(*_, **__):
        raise NumericalError("probability drift")

    monkeypatch.setattr(cli, "sample_ensemble", fail)
    assert _run("epr", "--theta", 0.5, "--trajectories", 10) == 3


def test_exit_code_io(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert _run("epr", "--theta", 0.5, "--trajectories", 10, "--output", blocker / "out") == 1


def test_no_output_means_no_files(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert _run("epr", "--theta", 0.5, "--trajectories", 10) == 0
    assert list(tmp_path.iterdir()) == []


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "beable.cli", "epr", "--theta", "0.5",
                          "--trajectories", "50"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "epr:" in res.stdout
