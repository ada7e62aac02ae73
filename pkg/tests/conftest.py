import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rmap.helmholtz import make_synthetic_case
from rmap.problem import make_linear_problem

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance criteria register their verdicts here; printed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(scope="session")
def acceptance():
    return ACCEPTANCE


@pytest.fixture(scope="session")
def helmholtz8():
    return make_synthetic_case(nx=8, alpha=8.0, seed=0)


@pytest.fixture(scope="session")
def helmholtz16():
    return make_synthetic_case(nx=16, alpha=8.0, seed=0)


@pytest.fixture
def linear_problem():
    problem, B = make_linear_problem(n_params=6, n_obs=4, noise_sigma=0.5, seed=1)
    return problem, B


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
