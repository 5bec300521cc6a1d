import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from su2kam.lattice import default_frequency
from su2kam.linop import NlsModel, Truncation

settings.register_profile("su2kam", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("su2kam")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def omega():
    return default_frequency(2).vector


@pytest.fixture(scope="session")
def small_model():
    return NlsModel(eps=1e-3, truncation=Truncation(4, 6, 4))


_CRITERIA: list = []


@pytest.fixture(scope="session")
def criterion():
    """``criterion(tag, ok, detail)`` prints one PASS/FAIL line and keeps it for the terminal summary."""

    def record(tag, ok, detail):
        line = f"criterion {tag:>3s} {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _CRITERIA.append(line)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
