import csv
import json
import subprocess
import sys

import pytest

from hdgmg.cli import main
from hdgmg.harness import (CANNED, EXIT_BAD_CONFIG, EXIT_CHECK_FAILED, EXIT_NONCONVERGED, EXIT_OK,
                           ConfigError, ResultTable, build_config, eoc, format_wide, load_config,
                           parse_int_list)

HEADER = ["table", "level", "dt", "p", "quantity", "value"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_parse_int_list():
    assert parse_int_list("2-6") == (2, 3, 4, 5, 6)
    assert parse_int_list("1,3") == (1, 3)
    with pytest.raises(ValueError):
        parse_int_list("x")


@pytest.mark.parametrize("name", CANNED)
def test_canned_configs_load(name):
    cfg = build_config(load_config(name))
    assert cfg.command in ("iters", "eoc")
    assert cfg.table == name


def test_canned_config_contents():
    eoc_cfg = build_config(load_config("table_eoc"))
    assert eoc_cfg.degrees == (1, 2, 3)
    assert eoc_cfg.levels_for(3)[-1] == 5
    steps = build_config(load_config("table_steps_p1"))
    assert steps.steps == (2, 4) and steps.levels == (2, 3, 4, 5, 6)
    assert build_config(load_config("table_n_iter")).nested == "both"


def test_bad_config_values():
    with pytest.raises(ConfigError):
        build_config({"command": "iters", "dt": "-1"})
    with pytest.raises(ConfigError):
        build_config({"command": "iters", "bogus": "1"})
    with pytest.raises(ConfigError):
        build_config({"command": "iters", "smoother": "sor"})
    with pytest.raises(ConfigError):
        load_config("no_such_table")


def test_eoc_formula():
    assert eoc(4.0, 1.0) == pytest.approx(2.0)
    assert eoc(1.0, 0.0) != eoc(1.0, 0.0)


def test_wide_format_marks_large_counts():
    t = ResultTable("x")
    t.add(2, 8.0, 1, "mg_iters", 150)
    t.add(3, 8.0, 1, "mg_iters", 40)
    text = format_wide(t)
    assert "--" in text and "40" in text


@pytest.mark.parametrize("argv", [
    ["iters", "--dt", "0"],
    ["iters", "--levels", "0-2"],
    ["iters", "--smoother", "sor"],
    ["--config", "missing_file.ini"],
    [],
])
def test_invalid_config_exit_code(argv, capsys):
    assert main(argv) == EXIT_BAD_CONFIG
    assert "invalid configuration" in capsys.readouterr().err


def test_iters_writes_csv(tmp_path, capsys):
    code = main(["iters", "--p", "1", "--levels", "2-3", "--dt", "4", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "iters.csv")
    assert rows[0] == HEADER
    q = {(r[1], r[4]): r[5] for r in rows[1:]}
    assert q["2", "dofs"] == "368" and q["3", "dofs"] == "1504"
    assert int(q["3", "n_iter"]) > 0
    assert "iters  p=1  n_iter" in capsys.readouterr().out


def test_output_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["eoc", "--p", "1", "--levels", "1-3", "--out", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "a" / "eoc.csv").read_bytes() == (tmp_path / "b" / "eoc.csv").read_bytes()


def test_nonconvergence_exit_code(tmp_path):
    code = main(["solve", "--p", "1", "--levels", "3", "--max-outer", "2", "--out", str(tmp_path)])
    assert code == EXIT_NONCONVERGED
    rep = json.loads((tmp_path / "solve_report.json").read_text())
    assert rep["converged"] is False and rep["n_iter"] == 2


def test_solve_artifacts(tmp_path):
    code = main(["solve", "--p", "1", "--levels", "2", "--verbose", "--dump-mesh", "--export-matrix",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    rep = json.loads((tmp_path / "solve_report.json").read_text())
    assert rep["dofs"] == 368 and rep["converged"]
    assert set(rep["errors"]) == {"u", "p", "L"}
    tele = (tmp_path / "telemetry.csv").read_text().splitlines()
    assert tele[0] == "iter,residual" and len(tele) > 2
    assert (tmp_path / "matrix_level2.mtx").read_text().startswith("%%MatrixMarket")
    assert (tmp_path / "mesh_level2.txt").exists()


def test_identity_and_negative_control(tmp_path):
    assert main(["identity", "--p", "1", "--levels", "1", "--out", str(tmp_path / "ok")]) == EXIT_OK
    assert main(["identity", "--p", "1", "--levels", "1", "--perturb",
                 "--out", str(tmp_path / "bad")]) == EXIT_CHECK_FAILED
    rows = read_csv(tmp_path / "bad" / "identity.csv")
    assert any(r[4] == "pass" and r[5] == "0" for r in rows)


def test_cond_command(tmp_path):
    assert main(["cond", "--p", "1", "--levels", "1-2", "--dt", "2", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "cond.csv")
    ratio = [float(r[5]) for r in rows[1:] if r[4] == "ratio"]
    assert len(ratio) == 1 and 2.0 < ratio[0] < 6.0


def test_config_flag_override(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\ncommand = iters\np = 1\nlevels = 1-2\ndt = 8\ntable = mine\n")
    assert main(["--config", str(cfg), "--dt", "4", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "mine.csv")
    assert {r[2] for r in rows[1:]} == {"4.0"}


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "hdgmg", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "eoc" in out.stdout
