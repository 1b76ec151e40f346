import sys

import numpy as np
import pytest

from c3dm.scene import TaskConfig


@pytest.fixture
def task():
    return TaskConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.REPORT):
        terminalreporter.write_line(acc.REPORT[n])
