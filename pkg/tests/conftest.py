import math

import pytest
from hypothesis import HealthCheck, settings

from poisson_suspensions.intensity import Component, IntensityMeasure

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def line():
    return IntensityMeasure.of(Component.constant("R", 1))


@pytest.fixture
def plane():
    return IntensityMeasure.of(Component.constant("P", 2))


@pytest.fixture
def mixed():
    """A line, a unit circle, the exponential half of a plane and a bounded strip."""
    return IntensityMeasure.of(
        Component.constant("R", 1),
        Component.torus("C", 1),
        Component.exponential("E", 1),
        Component.constant("S", 1, 2.0, ((0.0,), (3.0,))),
        Component.constant("P", 2, 0.5),
    )


def approx(a, b, rel=1e-12, abs_=0.0):
    return math.isclose(a, b, rel_tol=rel, abs_tol=abs_)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get(
        "tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, title = results[n]
        terminalreporter.write_line(f"{status} criterion {n:2d}: {title}")
