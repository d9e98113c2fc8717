import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dispersal.mesh import build_grid
from dispersal.operators import operator
from dispersal.spectral import principal_eigenpair
from dispersal.steady import minimize_energy

settings.register_profile(
    "dispersal",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("dispersal")


@pytest.fixture(scope="session")
def line256():
    return build_grid(1, (-1.0, 1.0), 256)


@pytest.fixture(scope="session")
def saturated(line256):
    """Local steady state for the constant resource 2 lambda_1 on (-1, 1)."""
    l1 = principal_eigenpair(operator(line256, 1.0)).eigenvalue
    sigma = np.full(line256.size, 2 * l1)
    return line256, sigma, minimize_energy(line256, 1.0, sigma), l1


@pytest.fixture(scope="session")
def construction_a():
    from dispersal.scenarios import run_construction_a

    return run_construction_a()


@pytest.fixture(scope="session")
def construction_b():
    from dispersal.scenarios import run_construction_b

    return run_construction_b()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
