import numpy as np
import pytest

from obnonuniq.grid import PeriodicGrid


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture(scope="session")
def grid16():
    return PeriodicGrid(2 * np.pi, 16)


@pytest.fixture(scope="session")
def grid32():
    return PeriodicGrid(12.0, 32)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
