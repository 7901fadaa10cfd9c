import numpy as np
import pytest

from hazard_bench.dataset import prepare

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def gbsg():
    return prepare()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_survival(rng, n, p=0, censor_frac=0.3, ties=False):
    """Small synthetic dataset: (X, times, events)."""
    X = rng.normal(size=(n, p))
    times = rng.exponential(10.0, n) + 0.1
    if ties:
        times = np.ceil(times)
    events = (rng.random(n) > censor_frac).astype(float)
    if events.sum() == 0:
        events[0] = 1.0
    return X, times, events


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
