import sys

import numpy as np
import pytest

from pmcem.numkit import make_rng
from pmcem.schedule import make_linear_schedule


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(scope="session")
def sched():
    return make_linear_schedule()


def standard_normal_score(x, sigma):
    """Score of N(0, I) convolved with N(0, sigma^2 I)."""
    return -np.asarray(x, dtype=float) / (1.0 + sigma ** 2)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("."))):
            terminalreporter.write_line(line)
