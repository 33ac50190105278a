import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def nn1():
    from lacelab.kernel import nearest_neighbour
    return nearest_neighbour(1)


@pytest.fixture
def nn3():
    from lacelab.kernel import nearest_neighbour
    return nearest_neighbour(3)


@pytest.fixture
def nn5():
    from lacelab.kernel import nearest_neighbour
    return nearest_neighbour(5)


@pytest.fixture
def two_site():
    from lacelab.kernel import Volume
    return Volume(np.array([[0], [1]]))


def within(est, se, exact, nsigma=3.0, floor=1e-12):
    return abs(est - exact) <= nsigma * se + floor


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
