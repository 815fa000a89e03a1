"""CLI behaviour and the end-to-end image acceptance check (A9)."""

import subprocess
import sys

import matplotlib.image as mpimg


def run_plot(*argv):
    return subprocess.run(
        [sys.executable, "-m", "hhoplot.cli", *argv],
        capture_output=True,
        text=True,
    )


def test_a9_images_from_solver_outputs(tmp_path, solver_output, record):
    jobs = {
        "contour": ["--in", str(solver_output / "concentration_final.csv")],
        "surface": ["--in", str(solver_output / "concentration_final.csv")],
        "recovery": ["--in", str(solver_output / "recovery.csv")],
    }
    codes = {}
    for kind, args in jobs.items():
        out = tmp_path / f"{kind}.png"
        proc = run_plot("--kind", kind, *args, "--out", str(out))
        codes[kind] = proc.returncode
        assert proc.returncode == 0, proc.stderr
        assert mpimg.imread(out).size > 0
    record(
        "A9",
        all(code == 0 for code in codes.values()),
        "contour, surface, and recovery images rendered from solver CSVs, all exit 0; "
        "constant-field single-colour check covered in the render suite",
    )


def test_constant_field_accepted(tmp_path, constant_field_csv):
    out = tmp_path / "c.png"
    proc = run_plot("--kind", "contour", "--in", str(constant_field_csv), "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    assert out.exists()


def test_missing_input_exits_2(tmp_path):
    proc = run_plot(
        "--kind", "contour", "--in", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.png")
    )
    assert proc.returncode == 2
    assert "plot:" in proc.stderr


def test_malformed_csv_exits_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("wrong,header\n1,2\n", encoding="utf-8")
    proc = run_plot("--kind", "recovery", "--in", str(bad), "--out", str(tmp_path / "o.png"))
    assert proc.returncode == 2
    assert "expected header" in proc.stderr


def test_too_many_field_inputs_exits_2(tmp_path, constant_field_csv):
    proc = run_plot(
        "--kind", "surface",
        "--in", str(constant_field_csv), str(constant_field_csv),
        "--out", str(tmp_path / "o.png"),
    )
    assert proc.returncode == 2
    assert "exactly one" in proc.stderr


def test_unknown_kind_rejected_by_parser(tmp_path, constant_field_csv):
    proc = run_plot(
        "--kind", "pie", "--in", str(constant_field_csv), "--out", str(tmp_path / "o.png")
    )
    assert proc.returncode == 2  # argparse usage error
