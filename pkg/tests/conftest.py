import os

import numpy as np
import pytest

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []
_RECORDED: set[str] = set()


def mark_recorded() -> None:
    _RECORDED.add(os.environ.get("PYTEST_CURRENT_TEST", "").split(" ")[0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    # a criterion that errored before it could record still gets its FAIL line
    if "test_acceptance.py" in report.nodeid and report.failed and report.nodeid not in _RECORDED:
        _RECORDED.add(report.nodeid)
        msg = str(report.longrepr).strip().splitlines()[-1] if report.longrepr else "error"
        ACCEPTANCE_LINES.append(f"FAIL  {report.nodeid.split('::')[-1]}: {report.when} error: {msg[:200]}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
