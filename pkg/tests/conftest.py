import numpy as np
import pytest
from hypothesis import settings

from tsuji_ke.sampling import sample_fs
from tsuji_ke.variety import parse_hypersurface

settings.register_profile("pkg", max_examples=40, deadline=None)
settings.load_profile("pkg")

ACCEPTANCE_LINES = []

FERMAT = "x^4 + y^4 + z^4"
PERTURBED = "x^4 + y^4 + z^4 + 0.3*x*y*z^2 + 0.7*x^3*y"


@pytest.fixture(scope="session")
def quartic():
    return parse_hypersurface(FERMAT)


@pytest.fixture(scope="session")
def perturbed():
    return parse_hypersurface(PERTURBED)


@pytest.fixture(scope="session")
def quintic():
    return parse_hypersurface("x^5 + y^5 + z^5")


@pytest.fixture(scope="session")
def surface():
    return parse_hypersurface("x^5 + y^5 + z^5 + w^5")


@pytest.fixture(scope="session")
def quartic_set(quartic):
    return sample_fs(quartic, 4000, 11)


@pytest.fixture(scope="session")
def perturbed_set(perturbed):
    return sample_fs(perturbed, 4000, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
