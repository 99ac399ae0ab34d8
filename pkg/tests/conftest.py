import numpy as np
import pytest
from hypothesis import settings

from ergosafe.scenario import shipped_scenario

settings.register_profile("ergosafe", deadline=None, max_examples=30)
settings.load_profile("ergosafe")

# acceptance outcomes, printed once at the end of the run
ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def default_scenario():
    return shipped_scenario("default")


@pytest.fixture(scope="session")
def default_spec(default_scenario):
    return default_scenario.problem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
