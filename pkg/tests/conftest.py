import sys

import pytest

from msle.paths import TimeGrid


@pytest.fixture
def grid():
    return TimeGrid(1.0, 1000)


@pytest.fixture
def coarse():
    return TimeGrid(1.0, 100)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
