import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("lab", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")

ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(rng, K, decay=2.0):
    k = np.arange(-K, K + 1)
    return (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * (1.0 + k * k) ** (-decay / 2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for c in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[c])
