import numpy as np
import pytest

from randinv.core import InverseProblem, LinearPto, ScaledIdentityCovariance
from randinv.problems import ProblemSpec, make_problem, make_random_linear


def scalar_problem(d=2.0, a=1.0, noise=1.0, prior=1.0, u0=0.0):
    """1-dim problem d = a u + noise with scalar covariances."""
    return InverseProblem(LinearPto(np.array([[a]])), np.array([d]), np.array([u0]),
                          ScaledIdentityCovariance(1, noise), ScaledIdentityCovariance(1, prior))


@pytest.fixture
def random_problem():
    return make_random_linear(5, 8, seed=3)[0]


@pytest.fixture(scope="session")
def deconv256():
    return make_problem(ProblemSpec("deconv1d", n=256))


@pytest.fixture(scope="session")
def nlheat16():
    return make_problem(ProblemSpec("nlheat", grid=16, m=40))


# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
