import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from conebeam.geometry import make_circular

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_geom():
    """8^3 volume, 6 views, 8x8 detector: small enough for a dense system matrix."""
    return make_circular(sod=100.0, sdd=200.0, nu=8, nv=8, du=4.0, dv=4.0, num_views=6,
                         nx=8, ny=8, nz=8, voxel_size=2.0)


@pytest.fixture(scope="session")
def small_geom():
    return make_circular(sod=300.0, sdd=600.0, nu=24, nv=20, du=3.0, dv=3.0, num_views=30,
                         nx=16, ny=16, nz=16, voxel_size=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
