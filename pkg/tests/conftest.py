import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def crandn(gen, *shape):
    return gen.standard_normal(shape) + 1j * gen.standard_normal(shape)


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def unit_sos_maps(gen, J, H, W):
    s = crandn(gen, J, H, W)
    return s / np.sqrt(np.sum(np.abs(s) ** 2, axis=0))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
