"""Shared pytest wiring: the acceptance-criterion scoreboard.

Acceptance tests call :func:`record_criterion` with the measured numbers;
the collected lines are printed in a dedicated terminal section after the
run so the verdicts survive output capture.
"""

from __future__ import annotations

import pytest

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    return record_criterion


def record_criterion(name: str, passed: bool, detail: str) -> None:
    """Append one scoreboard line; tests still assert on their own."""
    _CRITERIA.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_CRITERIA):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{name}: {verdict} -- {detail}")
