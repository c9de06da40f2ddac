import numpy as np
import pytest

from hdgmg.mesh import MeshHierarchy
from hdgmg.problem import ManufacturedProblem


@pytest.fixture(scope="session")
def meshes():
    return MeshHierarchy.build(4)


@pytest.fixture(scope="session")
def problem():
    return ManufacturedProblem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    """Remember one criterion outcome; all lines are printed in the summary."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
