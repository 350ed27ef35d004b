import csv
import json
import subprocess
import sys

import pytest

from specctrl import cli


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("SPECCTRL_CACHE_DIR", str(tmp_path / "cache"))
    return tmp_path


def run(*argv):
    return cli.main(["--workers", "1", *argv])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_scan_writes_rows(work, capsys):
    assert run("scan", "--modes", "16:64", "--out", "s.csv") == 0
    r = rows(work / "s.csv")
    assert r[0][:6] == ["h", "z_re", "z_im", "norm", "cutoff_norm", "iterations"]
    assert len(r) == 4
    assert float(r[1][0]) == 1 / 16
    assert "rows=3" in capsys.readouterr().out
    assert (work / "s.csv.meta.json").exists()


def test_scan_cache_reproducible(work):
    assert run("scan", "--modes", "16:32", "--out", "a.csv") == 0
    assert run("scan", "--modes", "16:32", "--out", "b.csv") == 0
    assert run("--no-cache", "scan", "--modes", "16:32", "--out", "c.csv") == 0
    a, b, c = (rows(work / f) for f in ("a.csv", "b.csv", "c.csv"))
    assert a == b == c


def test_fit_and_pipeline(work):
    assert run("scan", "--modes", "16:128", "--out", "s.csv") == 0
    assert run("fit", "--scan", "s.csv", "--out", "fit.json") == 0
    fit = json.loads((work / "fit.json").read_text())
    assert set(fit["fits"]) == {"power", "log", "sqrt-log", "power-log"}
    assert fit["fits"]["log"]["constants"]["C"] > 0
    assert run("pipeline", "--scan", "s.csv", "--modes", "16:64", "--K", "10", "--out", "p.json",
               "--csv", "p.csv") == 0
    p = json.loads((work / "p.json").read_text())
    assert [r["m"] for r in p["records"]] == [16, 32, 64]


def test_pipeline_without_scan(work, capsys):
    assert run("pipeline", "--scan", "missing.csv") == 2
    assert "specctrl scan" in capsys.readouterr().err


def test_pipeline_mode_outside_scan(work):
    assert run("scan", "--modes", "16:32", "--out", "s.csv") == 0
    assert run("pipeline", "--scan", "s.csv", "--modes", "16:64") == 2


def test_fit_needs_enough_points(work):
    assert run("scan", "--modes", "16:32", "--out", "s.csv") == 0
    assert run("fit", "--scan", "s.csv") == 2


def test_bad_ranges(work):
    assert run("scan", "--modes", "abc") == 2
    assert run("control", "--band", "1-2") == 2


def test_control_command(work):
    assert run("control", "--nx", "63", "--ny", "31", "--steps", "400", "--g-csv", "g.csv",
               "--samples", "5", "--out", "c.json") == 0
    data = json.loads((work / "c.json").read_text())
    assert data["rho"] <= 1e-8 and data["criteria"]["null_control"]
    assert len(rows(work / "g.csv")) == 6


def test_control_unobservable_exits_3(work):
    # a strip outside the box sees nothing: the Gramian vanishes
    assert run("control", "--nx", "31", "--ny", "15", "--omega", "strip:2:3") == 3


def test_quasimode_and_report(work):
    assert run("quasimode", "--n-per-unit", "64", "--m", "3:6", "--out", "q.csv") == 0
    assert run("report", "q.csv", "q.json", "--out", "r.json") == 0
    rep = json.loads((work / "r.json").read_text())
    assert rep["criteria"] == {"quasimode_band": True}
    assert (work / "q.png").stat().st_size > 0
    assert (work / "q.dat").read_text().startswith("# m k error")


def test_report_scan_figure(work):
    assert run("scan", "--modes", "16:128", "--out", "s.csv") == 0
    assert run("report", "s.csv", "--out", "r.json") == 0
    assert (work / "s.png").exists()


def test_report_empty_and_missing(work):
    assert run("report", "--out", "r.json") == 0
    assert json.loads((work / "r.json").read_text())["all_passed"] is None
    assert run("report", "nope.json") == 2


def test_report_conflict(work):
    (work / "a.json").write_text(json.dumps({"kind": "x", "criteria": {"c": True}}))
    (work / "b.json").write_text(json.dumps({"kind": "y", "criteria": {"c": False}}))
    (work / "c.json").write_text(json.dumps({"kind": "x", "value": 2}))
    assert run("report", "a.json", "b.json") == 2
    assert run("report", "a.json", "c.json") == 2
    assert run("report", "a.json", "a.json", "--out", "r.json") == 0


def test_run_config(work):
    cfg = {"schema_version": 1, "experiment": "quasimode",
           "params": {"n_per_unit": 64, "m": "3:5", "out": "q.csv"}}
    (work / "cfg.json").write_text(json.dumps(cfg))
    assert run("run", "cfg.json") == 0
    assert len(rows(work / "q.csv")) == 4


@pytest.mark.parametrize("cfg, field", [
    ({"schema_version": 2, "experiment": "scan"}, "schema_version"),
    ({"schema_version": 1, "experiment": "nope"}, "experiment"),
    ({"schema_version": 1, "experiment": "scan", "params": {"bogus": 1}}, "params.bogus"),
    ({"schema_version": 1, "experiment": "scan", "params": {"modes": 16}}, "params.modes"),
    ({"schema_version": 1, "experiment": "scan", "extra": 1}, "extra"),
    ({"schema_version": 1, "experiment": "scan", "workers": 0}, "workers"),
])
def test_run_config_errors(work, capsys, cfg, field):
    (work / "cfg.json").write_text(json.dumps(cfg))
    assert run("run", "cfg.json") == 2
    assert f"config.{field}" in capsys.readouterr().err


def test_run_malformed_json(work, capsys):
    (work / "cfg.json").write_text("{not json")
    assert run("run", "cfg.json") == 2
    assert "valid JSON" in capsys.readouterr().err


def test_selftest_quick(work, capsys):
    assert run("selftest", "--out", "st.json") == 0
    assert "[PASS] 11" in capsys.readouterr().out


def test_console_script(work):
    out = subprocess.run([sys.executable, "-m", "specctrl.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "selftest" in out.stdout
