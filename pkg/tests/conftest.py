import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kwcopt.fem import assemble_operators, build_grid

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile(
    "thorough", max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture(scope="session")
def ops1d():
    return assemble_operators(build_grid(1, 9))


@pytest.fixture(scope="session")
def ops2d():
    return assemble_operators(build_grid(2, 4))


@pytest.fixture(params=[1, 2], ids=["1d", "2d"], scope="session")
def ops_small(request):
    return assemble_operators(build_grid(request.param, 9 if request.param == 1 else 4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
