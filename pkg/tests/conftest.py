import numpy as np
import pytest

from complik.core import RngStream
from complik.grf import GrfDesign, GrfModel

GRF_TRUTH = np.array([0.0, 2.0, 0.7, 1.0])


def pytest_addoption(parser):
    parser.addoption("--run-bootstrap", action="store_true", default=False,
                     help="run the slow bootstrap coverage experiment")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-bootstrap"):
        return
    skip = pytest.mark.skip(reason="slow bootstrap experiment; pass --run-bootstrap")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def grid4():
    return GrfModel(GrfDesign.grid(4, 3.0))


@pytest.fixture(scope="session")
def grid3():
    return GrfModel(GrfDesign.grid(3, None))


@pytest.fixture
def stream():
    return RngStream(20240611)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record and print a PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
