import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from idet.verify import random_instance

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def instance(rng):
    def make(n=4, j=2, m=1, length=2, dc=0.0, beams=False, **fields):
        return random_instance(rng, n, j, m, length, dc_requirement=dc, beams=beams, **fields)
    return make


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one criterion outcome: ``acceptance(number, passed, detail)``."""
    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
