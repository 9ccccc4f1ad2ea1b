import csv
import json
import subprocess
import sys

import pytest

from stokeshape.cli import EXIT_CONFIG, main


def run(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_solve_outputs_are_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, "mesh:\n  n: 4\ncontrol:\n  initial: sinusoidal\n")
    for d in ("a", "b"):
        code, out, _ = run(["solve", "--config", cfg, "--out", str(tmp_path / d)], capsys)
        assert code == 0
        assert json.loads(out)["command"] == "solve"
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["config.resolved.yaml", "control.csv", "mesh.txt", "plot.gp", "solution.csv",
                     "solution_physical.csv", "summary.json"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "solution.csv") as fh:
        assert next(csv.reader(fh)) == ["x", "y", "ux", "uy", "p"]
    assert (tmp_path / "a" / "control.csv").read_text().startswith("x,q\n")
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["divergence_residual"] <= 1e-9


def test_resolved_config_round_trips(tmp_path, capsys):
    cfg = write(tmp_path, "preset: testcase2\nmesh:\n  n: 4\n")
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "o")], capsys)[0] == 0
    code, _, _ = run(["solve", "--config", str(tmp_path / "o" / "config.resolved.yaml"),
                      "--out", str(tmp_path / "p")], capsys)
    assert code == 0
    assert (tmp_path / "o" / "solution.csv").read_bytes() == (tmp_path / "p" / "solution.csv").read_bytes()


@pytest.mark.parametrize("text", ["functional:\n  alpha: -3\n", "nonsense: 1\n", "control:\n  initial: nope\n"])
def test_config_error_reports_json(tmp_path, capsys, text):
    cfg = write(tmp_path, text)
    out_dir = tmp_path / "err"
    code, out, err = run(["solve", "--config", cfg, "--out", str(out_dir)], capsys)
    assert code == EXIT_CONFIG
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["exit_code"] == EXIT_CONFIG and payload["error"] == "ConfigError"
    assert json.loads((out_dir / "error.json").read_text()) == payload
    assert out == ""


def test_optimize_small(tmp_path, capsys):
    cfg = write(tmp_path, "mesh:\n  n: 8\noptimizer:\n  max_iters: 3\n")
    code, _, _ = run(["optimize", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    lines = (tmp_path / "o" / "history.csv").read_text().splitlines()
    assert lines[0] == "iter,j,j_energy,j_reg,j_vol,step"
    assert len(lines) >= 2
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["monotone"] and summary["iterations"] <= 3
    assert (tmp_path / "o" / "control_final.csv").is_file()


def test_sweep_small(tmp_path, capsys):
    cfg = write(tmp_path, "preset: alpha-sweep\nmesh:\n  n: 4\noptimizer:\n  max_iters: 2\n"
                          "sweep:\n  values: [0.1, 10.0]\n")
    code, _, _ = run(["sweep", "--config", cfg, "--out", str(tmp_path / "s")], capsys)
    assert code == 0
    rows = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("alpha,j,") and len(rows) == 3


def test_converge_small(tmp_path, capsys):
    cfg = write(tmp_path, "preset: testcase2\nmesh:\n  sizes: [4, 8]\n"
                          "converge:\n  alphas: [0.0]\n  max_iters: 5\n")
    code, _, _ = run(["converge", "--config", cfg, "--out", str(tmp_path / "c")], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "c" / "summary.json").read_text())
    rep = summary["reports"][0]
    assert rep["reference"] == 0.0 and rep["reference_method"] == "exact"
    assert [r["n"] for r in rep["rows"]] == [4, 8]


def test_converge_needs_three_levels_for_richardson(tmp_path, capsys):
    cfg = write(tmp_path, "preset: testcase2\nmesh:\n  sizes: [4, 8]\nconverge:\n  alphas: [0.1]\n")
    code, _, err = run(["converge", "--config", cfg, "--out", str(tmp_path / "c")], capsys)
    assert code == EXIT_CONFIG
    assert "three" in json.loads(err)["message"]


def test_converge_needs_tracking(tmp_path, capsys):
    cfg = write(tmp_path, "mesh:\n  sizes: [4, 8, 16]\n")
    code, _, _ = run(["converge", "--config", cfg, "--out", str(tmp_path / "c")], capsys)
    assert code == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stokeshape.cli", "solve", "--config",
                           write(tmp_path, "mesh:\n  n: 2\n"), "--out", str(tmp_path / "x")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    bad = subprocess.run([sys.executable, "-m", "stokeshape.cli", "solve", "--config",
                          str(tmp_path / "missing.yaml")], capture_output=True, text=True, cwd=tmp_path)
    assert bad.returncode != 0
    assert json.loads(bad.stderr)["error"] == "ConfigError"
