from __future__ import annotations

import csv
import statistics
import subprocess
import sys

import pytest

from fabresched.cli import ConfigError, RunConfig, main, parse_override
from fabresched.sim import TrialMetrics


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["run", "--trials", "2", "--out", str(out), *extra]) == 0
    return out


@pytest.fixture(scope="module")
def risk_on(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "on"
    assert main(["run", "--trials", "5", "--risk", "on", "--out", str(out)]) == 0
    return out


def test_run_writes_rows_and_cohorts(risk_on):
    with open(risk_on / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == TrialMetrics.columns()
    assert len(rows) == 6 and all(len(r) == len(rows[0]) for r in rows)
    assert [r[1] for r in rows[1:]] == ["0", "1", "2", "3", "4"]
    with open(risk_on / "cohorts.csv") as fh:
        assert len(list(csv.reader(fh))) == 11
    summary = (risk_on / "summary.txt").read_text()
    assert "1-10" in summary and "91-100" in summary
    assert (risk_on / "events.log").read_text().startswith("trial\ttick\t")


def test_summary_matches_csv(risk_on):
    with open(risk_on / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    lines = {ln.split()[0]: ln.split() for ln in (risk_on / "summary.txt").read_text().splitlines() if ln.strip()}
    for col in ("damaged", "broken", "communications", "mean_cycle", "avg_risk"):
        vals = [float(r[col]) for r in rows]
        assert lines[col][1] == f"{statistics.fmean(vals):.6f}"
        assert lines[col][2] == f"{statistics.stdev(vals):.6f}"


def test_zero_trials_is_a_config_error(tmp_path):
    assert main(["run", "--trials", "0", "--out", str(tmp_path)]) == 2


def test_bad_override_and_flags(tmp_path):
    assert main(["run", "--set", "delta=-4", "--out", str(tmp_path)]) == 2
    assert main(["run", "--set", "nope=1", "--out", str(tmp_path)]) == 2
    assert main(["run", "--mode", "sideways", "--out", str(tmp_path)]) == 2
    assert main(["run", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_missing_output_dir(monkeypatch):
    monkeypatch.delenv("RESCHED_OUT", raising=False)
    assert main(["run", "--trials", "1"]) == 2


def test_env_output_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("RESCHED_OUT", str(tmp_path / "env"))
    assert main(["run", "--trials", "1"]) == 0
    assert (tmp_path / "env" / "metrics.csv").exists()


def test_infeasible_scenario_exit_code(tmp_path):
    from fabresched.scenario import build_minifab

    sc = build_minifab()
    sc.machines = [m for m in sc.machines if "P4" not in m.times]
    path = tmp_path / "broken.json"
    sc.save(path)
    assert main(["run", "--scenario", str(path), "--trials", "1", "--out", str(tmp_path / "o")]) == 3


def test_same_config_same_bytes(tmp_path):
    a = _run(tmp_path, "a", "--seed", "3")
    b = _run(tmp_path, "b", "--seed", "3")
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "events.log").read_bytes() == (b / "events.log").read_bytes()


def test_compare_identical_configs(tmp_path):
    a = _run(tmp_path, "a")
    b = _run(tmp_path, "b")
    assert main(["compare", str(a), str(b), "--out", str(tmp_path)]) == 0
    text = (tmp_path / "comparison.txt").read_text()
    deltas = [ln.split()[-1] for ln in text.splitlines() if ln.startswith(" ") and "B (" in ln]
    assert deltas and all(float(d) == 0 for d in deltas)


def test_compare_modes_shows_communications(tmp_path):
    a = _run(tmp_path, "dist")
    b = _run(tmp_path, "cent", "--mode", "centralized")
    assert main(["compare", str(a), str(b)]) == 0
    text = (b / "comparison.txt").read_text()
    assert "communications" in text and "seed 0" in text and "seed 1" in text


def test_compare_mismatched_seeds(tmp_path):
    a = _run(tmp_path, "a")
    b = _run(tmp_path, "b", "--seed", "5")
    assert main(["compare", str(a), str(b)]) == 2


def test_parse_override():
    assert parse_override("delta=5") == ("delta", 5)
    assert parse_override("W=250") == ("W", 250.0)
    for bad in ("delta", "delta=x", "sigma_frac=0.9"):
        with pytest.raises(ConfigError):
            parse_override(bad)


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(trials=0)
    assert RunConfig(trials=3, seed=4).seeds() == [4, 5, 6]


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "fabresched", "run", "--trials", "1", "--set", "delta=5", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "summary.txt").exists()
