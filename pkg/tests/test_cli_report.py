import csv
import json
import math
import re

import numpy as np
import pytest

from relsa.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from relsa.config import parse_config
from relsa.report import CSV_COLUMNS, emit_csv, emit_svg, fmt, write_outputs
from relsa.study import run_study

STUDY = """\
[study]
model = hyperplane
n = 4000
seed = 77
output_dir = {out}

[perturbation mean]
kind = mean_shift
lo = -1
hi = 1
points = 6

[perturbation variance]
kind = variance_shift
lo = 0.4
hi = 1.9
points = 4

[baselines]
form = true
sobol = true
sobol_n_base = 500
"""


def _write(tmp_path, text, name="study.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _run(tmp_path, text, *extra, name="a"):
    out = tmp_path / name
    cfg = _write(tmp_path, text.format(out=out), f"{name}.ini")
    code = main(["run", "--config", str(cfg), "--quiet", *extra])
    return code, out


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# --- formatting -------------------------------------------------------------------

def test_fmt_round_trips_exactly():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, math.pi):
        assert float(fmt(x)) == x
    assert (fmt(math.inf), fmt(-math.inf), fmt(math.nan)) == ("inf", "-inf", "nan")


# --- CLI runs -------------------------------------------------------------------------

def test_run_writes_all_outputs_and_is_reproducible(tmp_path):
    code_a, out_a = _run(tmp_path, STUDY, name="a")
    code_b, out_b = _run(tmp_path, STUDY, "--threads", "3", name="b")
    assert code_a == code_b == EXIT_OK
    for f in ("curves.csv", "curves.svg", "form.csv", "sobol.csv", "summary.json"):
        assert (out_a / f).is_file()
    # same seed, any thread count: byte-identical tables
    for f in ("curves.csv", "form.csv", "sobol.csv"):
        assert (out_a / f).read_bytes() == (out_b / f).read_bytes()


def test_curve_csv_layout(tmp_path):
    code, out = _run(tmp_path, STUDY)
    assert code == EXIT_OK
    rows = _rows(out / "curves.csv")
    assert tuple(rows[0]) == CSV_COLUMNS
    body = rows[1:]
    # 4 inputs x (6 + 4) grid points, then one probability row
    assert len(body) == 4 * 10 + 1
    assert body[-1][1] == "probability"
    kinds = [r[1] for r in body[:-1]]
    assert kinds == ["mean_shift"] * 24 + ["variance_shift"] * 16
    assert [r[0] for r in body[:6]] == ["X1"] * 6


def test_csv_values_reload_exactly(tmp_path):
    cfg = parse_config(STUDY.format(out=tmp_path / "x"))
    result = run_study(cfg)
    path = emit_csv(result, tmp_path / "c.csv")
    rows = _rows(path)[1:]
    first = result.curves[0].curve.points[0][1]
    assert float(rows[0][3]) == first.s_hat
    assert float(rows[0][4]) == first.variance_hat
    assert (float(rows[0][5]), float(rows[0][6])) == first.ci
    assert float(rows[-1][7]) == result.probability.p_hat


def test_header_only_csv_without_curves(tmp_path):
    text = "[study]\nmodel = hyperplane\nn = 500\nseed = 1\n"
    result = run_study(parse_config(text))
    rows = _rows(emit_csv(result, tmp_path / "c.csv"))
    assert rows == [list(CSV_COLUMNS)]


def test_svg_has_one_polyline_per_input_and_panel(tmp_path):
    cfg = parse_config(STUDY.format(out=tmp_path / "x"))
    svg = emit_svg(run_study(cfg), tmp_path / "c.svg").read_text()
    lines = re.findall(r'<polyline [^>]*data-input="(X\d)"', svg)
    assert len(lines) == 8
    assert sorted(set(lines)) == ["X1", "X2", "X3", "X4"]
    assert svg.count("<polygon") == 8


def test_replications_and_summary(tmp_path):
    code, out = _run(tmp_path, STUDY, "--replications", "3")
    assert code == EXIT_OK
    rows = _rows(out / "curves_replications.csv")
    assert rows[0][0] == "replication" and len(rows) == 1 + 3 * 40
    assert {r[0] for r in rows[1:]} == {"0", "1", "2"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["model_calls"]["curves"] == 0
    assert summary["model_calls"]["design"] == 3 * 4000
    sobol = _rows(out / "sobol.csv")
    assert len(sobol) == 1 + 4


def test_failed_grid_points_become_nan_rows(tmp_path, capsys):
    # Q has a Gumbel upper tail: a variance above its own has no tilted solution
    text = """\
[study]
model = flood
n = 20000
seed = 3
output_dir = {out}

[perturbation v]
kind = variance_shift
inputs = Q
lo = 2e5
hi = 6e5
points = 3
"""
    code, out = _run(tmp_path, text)
    assert code == EXIT_OK
    assert "skipped point" in capsys.readouterr().err
    rows = _rows(out / "curves.csv")[1:-1]
    assert len(rows) == 3
    np.testing.assert_allclose([float(r[2]) for r in rows], [2e5, 4e5, 6e5])
    assert [math.isnan(float(r[3])) for r in rows] == [False, False, True]
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["point_failures"]) == 1
    assert rows[2][9] == "20000" and rows[2][10] == "false"


# --- exit codes -------------------------------------------------------------------

def test_config_error_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, STUDY.replace("n = 4000", "n = 10"))
    assert code == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    code, _ = _run(tmp_path, STUDY, "--threads", "0", name="t")
    assert code == EXIT_CONFIG


def test_runtime_error_exit_code(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    text = STUDY.replace("output_dir = {out}", f"output_dir = {blocker / 'sub'}")
    code, _ = _run(tmp_path, text)
    assert code == EXIT_RUNTIME
    assert "runtime error" in capsys.readouterr().err


def test_models_command(capsys):
    assert main(["models"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "hyperplane\t4" in out and "flood\t4" in out and "ishigami_threshold\t3" in out


def test_write_outputs_skips_disabled_baselines(tmp_path):
    text = "[study]\nmodel = hyperplane\nn = 500\nseed = 1\n"
    files = {p.name for p in write_outputs(run_study(parse_config(text)), tmp_path / "o")}
    assert files == {"curves.csv", "curves.svg", "summary.json"}


def test_cli_help_exits_cleanly():
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
