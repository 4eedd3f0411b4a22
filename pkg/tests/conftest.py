from __future__ import annotations

import pytest

from wfreplay.repo import Repository
from wfreplay.scenarios import espn10_book, espn10_workflow, espn_book, espn_workflow
from wfreplay.synthesis.oracle import OracleBackend

# Filled by test_acceptance.py; printed at the end of the session.
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (len(k), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def repo(tmp_path):
    return Repository(tmp_path / "repo")


@pytest.fixture
def espn_wf():
    return espn_workflow()


@pytest.fixture
def espn_oracle():
    return OracleBackend(espn_book())


@pytest.fixture
def espn10_wf():
    return espn10_workflow()


@pytest.fixture
def espn10_oracle():
    return OracleBackend(espn10_book())


@pytest.fixture
def record_criterion():
    """Returns ``record(number, passed, summary)`` for the acceptance report."""

    def record(number: int, passed: bool, summary: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {summary}"
        ACCEPTANCE_LINES[str(number)] = line
        print(line)

    return record
