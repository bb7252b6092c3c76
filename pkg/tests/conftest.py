import numpy as np
import pytest

from endolab.families import canonical


@pytest.fixture(scope="session")
def expanding():
    return canonical("expanding-3-2")


@pytest.fixture(scope="session")
def saddle():
    return canonical("saddle-3-1-1-1")


@pytest.fixture(scope="session")
def nonhyp():
    return canonical("nonhyp-6")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
