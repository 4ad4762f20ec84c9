import csv
import json
import math

import numpy as np
import pytest

from viscokirchhoff.cli import dumps, main, parse_axis, sweep
from viscokirchhoff.config import ConfigError, load_config, parse_config
from viscokirchhoff.functionals import CSV_COLUMNS

BENCH = """
[grid]
n_interior = {n}
[model]
a = 1.0
b = 0.0
gamma = 1.0
p = 3.0
[stepper]
t_max = {t_max}
[initial]
u0 = [{amp}]
u1 = [0.0]
"""


def write(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def bench(tmp_path, n=100, t_max=2.0, amp=6.0, extra=""):
    return write(tmp_path, BENCH.format(n=n, t_max=t_max, amp=amp) + extra)


def test_minimal_config_defaults():
    cfg = parse_config("[model]\np = 3.0\n[stepper]\nt_max = 1.0\n")
    assert cfg.grid.L == 1.0 and cfg.grid.n_interior == 200
    assert cfg.params.a == 1.0 and cfg.params.b == 0.0
    assert cfg.kernel.is_zero
    assert cfg.stepper.convolution == "recurrence"
    assert cfg.forcing.kind == "none" and not cfg.certificate.enable


@pytest.mark.parametrize("text, fragment", [
    ("[model]\np = 0.5\n[stepper]\nt_max = 1.0\n", "p must exceed 1"),
    ("[model]\np = 3.0\n[kernel]\nform = 'expsum'\nterms = [[2.0, 1.0]]\n[stepper]\nt_max = 1.0\n",
     "total mass 2"),
    ("[model]\np = 3.0\n[stepper]\nt_max = 1.0\nbogus = 1\n", "unknown key"),
    ("[model]\np = 3.0\n", "missing required key 'stepper.t_max'"),
    ("[model]\np = 3.0\n[stepper]\nt_max = 1.0\nconvolution = 'fft'\n", "convolution"),
    ("[model\np = 3", "malformed"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert fragment in str(exc.value)


def test_config_error_exit_code(tmp_path, capsys):
    path = write(tmp_path, "[model]\np = 0.5\n[stepper]\nt_max = 1.0\n")
    assert main(["run", str(path)]) == 2
    assert "p must exceed 1" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.toml")]) == 2


def test_zero_data_run_completes_with_zero_diagnostics(tmp_path):
    extra = '[output]\ncsv = "z.csv"\njson = "z.json"\n'
    path = bench(tmp_path, n=40, t_max=0.3, amp=0.0, extra=extra)
    assert main(["run", str(path)]) == 0
    summary = json.loads((tmp_path / "z.json").read_text())
    assert summary["status"] == "completed" and summary["exit_code"] == 0
    assert summary["t_final"] == pytest.approx(0.3)
    with open(tmp_path / "z.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    for r in rows:
        assert float(r["E"]) == 0.0 and float(r["Linf"]) == 0.0
    assert float(rows[-1]["t"]) == pytest.approx(0.3)


def test_benchmark_run_exits_10_with_blowup_summary(tmp_path, capsys):
    path = bench(tmp_path, extra="[certificate]\nenable = true\n")
    assert main(["run", str(path)]) == 10
    summary = json.loads(capsys.readouterr().out)
    assert summary["blowup"]["flag"] is True
    assert 0.3 < summary["blowup"]["T_est"] < 0.42
    assert summary["certificate"]["valid"] is False
    assert summary["monitor"]["worst_cs_gap_rel"] <= 1e-12
    assert "versions" in summary and "config" in summary


def test_mandatory_certificate_failure_exits_20(tmp_path):
    path = bench(tmp_path, extra='[certificate]\nmandatory = true\n[output]\njson = "m.json"\n')
    assert main(["run", str(path)]) == 20
    assert json.loads((tmp_path / "m.json").read_text())["status"] == "certificate-failed"


def test_check_exit_codes(tmp_path, capsys):
    assert main(["check", str(bench(tmp_path))]) == 20
    report = json.loads(capsys.readouterr().out)
    assert set(report["hypotheses"]) == {"energy_positive", "I_negative", "u0u1_positive", "l2_above_threshold"}


def test_mms_run_reports_convergence(tmp_path, capsys):
    text = BENCH.format(n=50, t_max=0.5, amp=1.0) + (
        "[kernel]\nform = 'expsum'\nterms = [[0.1, 1.0]]\n"
        "[forcing]\nkind = 'mms'\nlevels = [25, 50, 100]\n")
    assert main(["run", str(write(tmp_path, text))]) == 0
    table = json.loads(capsys.readouterr().out)["mms"]["convergence"]
    assert [r["n_interior"] for r in table] == [25, 50, 100]
    assert table[0]["order"] is None
    assert min(r["order"] for r in table[1:]) > 1.9


def test_emit_every_thins_csv_and_keeps_last_row(tmp_path):
    extra = '[output]\ncsv = "e.csv"\nemit_every = 7\n'
    path = bench(tmp_path, n=30, t_max=0.2, amp=0.5, extra=extra)
    main(["run", str(path)])
    rows = list(csv.reader(open(tmp_path / "e.csv")))[1:]
    ts = [float(r[0]) for r in rows]
    assert ts[0] == 0.0 and ts[-1] == pytest.approx(0.2)
    assert len(rows) < 0.2 / 1e-3 / 5


def test_json_writes_nonfinite_as_null():
    assert json.loads(dumps({"a": math.nan, "b": np.float64(1.5), "c": [np.inf]})) == {
        "a": None, "b": 1.5, "c": [None]}


def test_parse_axis_handles_lists():
    assert parse_axis("initial.u0=[1.0],[6.0, 0.5]") == ("initial.u0", [[1.0], [6.0, 0.5]])
    assert parse_axis("model.p=3,4.5") == ("model.p", [3, 4.5])
    with pytest.raises(ValueError):
        parse_axis("model.p")


def test_single_cell_sweep_matches_run(tmp_path, capsys):
    path = bench(tmp_path)
    rows = sweep(load_config(path), [("model.p", [3.0])])
    main(["run", str(path)])
    summary = json.loads(capsys.readouterr().out)
    assert rows[0]["status"] == summary["status"]
    assert rows[0]["T_est"] == summary["blowup"]["T_est"]


def test_amplitude_sweep(tmp_path, capsys):
    path = bench(tmp_path, amp=1.0)
    assert main(["sweep", str(path), "--axis", "initial.amplitude=1.0,6.0"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [r["status"] for r in rows] == ["completed", "blown-up"]


def test_three_by_three_sweep_is_ordered(tmp_path, monkeypatch):
    monkeypatch.setenv("VISCOKIRCHHOFF_WORKERS", "3")
    path = bench(tmp_path, n=40, t_max=0.2, amp=1.0)
    out = tmp_path / "sweep.csv"
    args = ["sweep", str(path), "--axis", "model.p=3,4,5",
            "--axis", "kernel.terms=[[0.0,1.0]],[[0.1,1.0]],[[0.2,1.0]]",
            "--axis", "kernel.form='expsum'", "--out", str(out)]
    assert main(args) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 9
    assert [r["model.p"] for r in rows] == ["3"] * 3 + ["4"] * 3 + ["5"] * 3
    assert all(r["status"] == "completed" for r in rows)
    assert main(args) == 0
    assert list(csv.DictReader(open(out))) == rows


def test_sweep_records_bad_cells(tmp_path):
    rows = sweep(load_config(bench(tmp_path, n=30, t_max=0.1, amp=0.5)),
                 [("model.p", [0.5, 3.0])])
    assert rows[0]["status"] == "config-error" and "p must exceed 1" in rows[0]["error"]
    assert rows[1]["status"] == "completed"


def test_search_emits_json_lines(tmp_path, capsys):
    path = bench(tmp_path, extra="seed = 3\n")
    path.write_text("seed = 3\n" + BENCH.format(n=100, t_max=1.0, amp=1.0))
    assert main(["search", str(path), "--budget", "200"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines
    for line in lines:
        assert json.loads(line)["certificate"]["valid"] is True


def test_kernel_test_subcommand(tmp_path, capsys):
    text = BENCH.format(n=20, t_max=1.0, amp=1.0) + (
        "[kernel]\nform = 'expsum'\nterms = [[0.05, 0.1]]\na2_horizon = 20.0\n")
    assert main(["kernel-test", str(write(tmp_path, text))]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["A1"]["ok"] is True and report["A2"]["verdict"] == "failed"
