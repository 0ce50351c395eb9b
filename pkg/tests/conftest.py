import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dampwave.coeffs import (detect_t0, make_exponential_family, make_polynomial_family,
                             make_superexponential_family)
from dampwave.zones import ZoneConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def poly():
    return make_polynomial_family(1.0, 0.5, 0.0, 0.625)


@pytest.fixture(scope="session")
def poly_cfg(poly):
    return ZoneConfig(t0=detect_t0(poly, 0.2, 200))


@pytest.fixture(scope="session")
def poly_bumps():
    return make_polynomial_family(1.0, 0.5, 0.0, 0.625, J=3)


@pytest.fixture(scope="session")
def rising():
    """Polynomial family whose damping ratio rho/(2 lam) increases."""
    return make_polynomial_family(1.0, 1.5, 0.0, 0.625)


@pytest.fixture(scope="session")
def expo():
    return make_exponential_family(1.5, 0.5, -0.25, J=3)


@pytest.fixture(scope="session")
def superexpo():
    return make_superexponential_family(1.5, 0.5, -0.25, J=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
