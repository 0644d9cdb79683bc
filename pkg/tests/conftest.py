import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from annulus_reduction import nehari
from annulus_reduction.disc import Grid
from annulus_reduction.params import ProblemParams

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")

# filled by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def params100():
    return ProblemParams(2, 1.0, 2.0, 3.0, 100.0)


@pytest.fixture(scope="session")
def grid256(params100):
    return Grid.for_params(params100, 256, 128)


@pytest.fixture(scope="session")
def small_grid(params100):
    return Grid.for_params(params100, 48, 24)


@pytest.fixture(scope="session")
def positive100(params100, grid256):
    return nehari.solve_positive(params100, grid256)


@pytest.fixture(scope="session")
def nodal100(params100, grid256):
    return nehari.solve_nodal(params100, grid256)


def interior_noise(grid, seed):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(grid.shape)
    vals[~grid.interior] = 0.0
    return vals
