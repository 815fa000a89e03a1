"""Shared fixtures: one real solver run, consumed only through its CLI.

The session fixture shells out to the installed ``simulate`` command with a
small configuration and hands the output directory to the tests, so every
plotting test exercises the exact CSV files the solver publishes. A tiny
scoreboard mirrors the solver package's acceptance reporting.
"""

from __future__ import annotations

import shutil
import subprocess

import pytest

_CRITERIA: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    _CRITERIA.append((name, passed, detail))


@pytest.fixture
def record():
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_CRITERIA):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{name}: {verdict} -- {detail}")


SOLVER_CONFIG = """\
mesh_kind = cartesian
mesh_nx = 6
mesh_ny = 6
mesh_bounds = 0, 0, 1000, 1000
k = 1
dt = 18
t_f = 180
stepper = crank_nicolson
well = injection, 1000, 1000, 30
well = production, 0, 0, 30
permeability = 80
d_l = 50
d_t = 5
porosity = 0.1
output_every = 5
"""


@pytest.fixture(scope="session")
def solver_output(tmp_path_factory):
    if shutil.which("simulate") is None:
        pytest.skip("solver CLI not installed; plots are tested against its outputs")
    base = tmp_path_factory.mktemp("solver")
    config = base / "run.cfg"
    config.write_text(SOLVER_CONFIG, encoding="utf-8")
    out = base / "out"
    proc = subprocess.run(
        ["simulate", "--config", str(config), "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return out


CONSTANT_FIELD = ["x,y,cell,value"]
for j in range(4):
    for i in range(4):
        CONSTANT_FIELD.append(f"{i * 100.0},{j * 100.0},{j * 4 + i},0.7")
CONSTANT_FIELD.append("# coef,0,0,0.7")


@pytest.fixture
def constant_field_csv(tmp_path):
    path = tmp_path / "constant.csv"
    path.write_text("\n".join(CONSTANT_FIELD) + "\n", encoding="utf-8")
    return path
