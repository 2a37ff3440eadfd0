import numpy as np
import pytest

from symlab.world import WorldSpec, random_walk


@pytest.fixture(scope="session")
def spec():
    return WorldSpec()


@pytest.fixture(scope="session")
def micro_spec():
    """6x6 grid rendered at 8x8 pixels, small enough for exhaustive gradient checks."""
    return WorldSpec(6, 8, 1.5)


@pytest.fixture(scope="session")
def walk(spec):
    return random_walk(spec, 2000, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line for the acceptance summary printed at the end of the run."""

    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append((number, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
