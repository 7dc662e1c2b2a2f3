import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pkg", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_probs(rng, B, C, sharp=1.0):
    z = rng.normal(size=(B, C)) * sharp
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# one line per acceptance criterion, filled in by test_acceptance and echoed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
