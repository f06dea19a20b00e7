import numpy as np
import pytest

from cqfield.scene import SceneDef, make_rig, synthesize

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_dataset():
    """Eight 16x16 views of the default sphere."""
    return synthesize(SceneDef(), make_rig(8, width=16, height=16))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
