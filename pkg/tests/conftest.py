import numpy as np
import pytest

from ftclab.problems import generate_logistic, solve_centralized


@pytest.fixture(scope="session")
def ref_problem():
    return generate_logistic(K=16, N=15, M=10, rho=0.01, heterogeneity=0.0, seed=1)


@pytest.fixture(scope="session")
def ref_solution(ref_problem):
    return solve_centralized(ref_problem, tol=1e-10)


@pytest.fixture(scope="session")
def hetero_problem():
    return generate_logistic(K=16, N=15, M=10, rho=0.01, heterogeneity=1.0, seed=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
