import sys

import pytest

from axsym.core import SeedSpec, build_grid
from axsym.kernels import make_cosh_family
from axsym.simulate import SimulationPlan, synthesize_field


@pytest.fixture(scope="session")
def cosh_family():
    return make_cosh_family([0.5])


@pytest.fixture(scope="session")
def cosh_ensemble(cosh_family):
    """Scalar cosh field on 5 x 16, N = 50, K = 2e4."""
    plan = SimulationPlan(build_grid(5, 16), cosh_family, N=50, K=20_000, seed=SeedSpec(2024))
    return synthesize_field(plan)


@pytest.fixture(scope="session")
def cosh_ensemble_fine(cosh_family):
    """Same family on 128 longitudes so projections up to n = 5 do not alias."""
    plan = SimulationPlan(build_grid(3, 128), cosh_family, N=50, K=20_000, seed=SeedSpec(77))
    return synthesize_field(plan)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
