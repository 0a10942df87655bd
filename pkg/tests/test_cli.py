import csv
import subprocess
import sys

import pytest

from alstokes.cli import (TABLE_COLUMNS, VERIFY_COLUMNS, ConfigError, ExperimentConfig, build_parser,
                          main, parse_config)


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def without_time(rows):
    return [{k: v for k, v in r.items() if k != "seconds"} for r in rows]


def test_parse_config_values_and_comments():
    cfg = parse_config("""
        # comment line
        problem = sinker
        gamma = 0, 10 ,1e3   # trailing comment
        variant = P1, P2
        nx = 4
    """)
    assert cfg.gamma == [0.0, 10.0, 1000.0]
    assert cfg.variant == ["P1", "P2"] and cfg.nx == 4 and cfg.ny == 0
    assert parse_config("") == ExperimentConfig()


@pytest.mark.parametrize("text", [
    "gamma =",
    "gama = 1",
    "nx = 2, 3",
    "smoother = gauss-seidel",
    "variant = P3",
    "gamma = -1",
    "k = 1",
    "just some words",
    "nx = four",
])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_help_documents_columns():
    text = build_parser().format_help()
    for col in TABLE_COLUMNS + VERIFY_COLUMNS:
        assert col in text
    assert "Exit codes" in text


def test_table_rows_and_trend(tmp_path, capsys):
    out = tmp_path / "t.csv"
    cfg = write(tmp_path, f"nx = 4\nn_sinkers = 4\nDR = 1e4\ngamma = 0, 10, 1000\noutput = {out}\n")
    assert main(["table", "--config", cfg]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == TABLE_COLUMNS and len(rows) == 3
    its = [int(r["iterations"]) for r in rows]
    assert its[0] >= its[1] >= its[2]
    assert all(r["converged"] == "True" for r in rows)
    printed = capsys.readouterr().out
    assert "iterations" in printed and len(printed.splitlines()) == 4


def test_table_reports_nonconvergence_as_data(tmp_path):
    out = tmp_path / "t.csv"
    cfg = write(tmp_path, f"nx = 2\nlevels = 3\nsmoother = jacobi\ntransfer = standard\n"
                          f"gamma = 1e4\nmaxit = 10\nn_sinkers = 4\noutput = {out}\n")
    assert main(["table", "--config", cfg]) == 0
    row = read_csv(out)[0]
    assert row["converged"] == "False" and row["iterations"] == "10"


def test_table_deterministic_and_threads(tmp_path):
    outs = []
    for i, threads in enumerate(("1", "2")):
        out = tmp_path / f"t{i}.csv"
        cfg = write(tmp_path, f"nx = 2\nlevels = 2\nvariant = P1, P2\ngamma = 0, 10\n"
                              f"n_sinkers = 4\noutput = {out}\n", f"c{i}.cfg")
        assert main(["table", "--config", cfg, "--threads", threads]) == 0
        outs.append(without_time(read_csv(out)))
    assert outs[0] == outs[1]


def test_empty_gamma_exit_2(tmp_path, capsys):
    assert main(["table", "--config", write(tmp_path, "gamma =\n")]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_config_and_bad_threads(tmp_path):
    assert main(["table", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert main(["table", "--threads", "0"]) == 2


def test_verify_exit_codes(tmp_path):
    out = tmp_path / "v.csv"
    cfg = write(tmp_path, f"nx = 2\nproblem = custom-constant-viscosity\ngamma = 0, 1, 10\n"
                          f"variant = P1, P2\noutput = {out}\n")
    assert main(["verify", "--config", cfg]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == VERIFY_COLUMNS and len(rows) == 6
    assert all(r["holds"] == "True" for r in rows)
    assert main(["verify", "--config", cfg, "--debug-scale-shat", "10"]) == 1
    assert any(r["holds"] == "False" for r in read_csv(out))


def test_verify_sinker_passes(tmp_path):
    cfg = write(tmp_path, f"nx = 4\nn_sinkers = 8\nDR = 1e4\ngamma = 0, 1, 10, 100\n"
                          f"output = {tmp_path / 'v.csv'}\n")
    assert main(["verify", "--config", cfg]) == 0


def test_verify_size_guard(tmp_path):
    cfg = write(tmp_path, f"nx = 32\noutput = {tmp_path / 'v.csv'}\n")
    assert main(["verify", "--config", cfg]) == 2


def test_dump_matrices(tmp_path):
    cfg = write(tmp_path, f"nx = 2\ngamma = 10\nn_sinkers = 2\noutput = {tmp_path / 't.csv'}\n")
    assert main(["table", "--config", cfg, "--dump-matrices", str(tmp_path / "mm")]) == 0
    files = sorted(p.name for p in (tmp_path / "mm").rglob("*.mtx"))
    assert files == ["A.mtx", "A_gamma.mtx", "B.mtx", "Mp.mtx", "Mp_invvisc.mtx"]


def test_nonlinear_linear_rheology(tmp_path, capsys):
    out, fields = tmp_path / "n.csv", tmp_path / "f.csv"
    cfg = write(tmp_path, f"problem = viscoplastic\nlevels = 2\nrheology = linear\ngamma = 10\n"
                          f"variant = P2\noutput = {out}\nfields_output = {fields}\n")
    assert main(["nonlinear", "--config", cfg]) == 0
    rows = read_csv(out)
    assert len(rows) == 1 and rows[0]["step"] == "1" and rows[0]["linear_converged"] == "True"
    assert "1 Newton steps (converged)" in capsys.readouterr().out
    assert read_csv(fields)[0].keys() == {"x", "y", "mu_eff", "II", "u", "v", "p"}


def test_command_problem_mismatch(tmp_path):
    assert main(["nonlinear", "--config", write(tmp_path, "problem = sinker\n")]) == 2
    assert main(["table", "--config", write(tmp_path, "problem = viscoplastic\n", "b.cfg")]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "alstokes.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "table" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "alstokes.cli", "table", "--config",
                           write(tmp_path, "bogus = 1\n")], capture_output=True, text=True)
    assert proc.returncode == 2
