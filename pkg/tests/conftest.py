import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pullback_lab.model import ModelConfig, NonlinearitySpec
from pullback_lab.spaces import RhoProfile

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected by tests/test_acceptance.py and echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cfg():
    return ModelConfig()


@pytest.fixture(scope="session")
def linear_cfg():
    """f = 0, g = 0, frozen rho = 1: a diagonal damped oscillator per mode."""
    return ModelConfig(n_modes=8, g_modes=(0.0,) * 8, rho=RhoProfile("constant", (1.0,)),
                       nonlinearity=NonlinearitySpec.named("zero"))


@pytest.fixture(scope="session")
def small_cfg():
    return ModelConfig(n_modes=12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
