import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pceuc.instances import builtin

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def uc4b():
    return builtin("UC_4b")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
