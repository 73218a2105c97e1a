import numpy as np
import pytest

from apm.data import bundled_iris_rows, prepare_iris, synth_replication_like


@pytest.fixture(scope="session")
def iris():
    return prepare_iris(bundled_iris_rows())


@pytest.fixture(scope="session")
def synth_small():
    return synth_replication_like(n_rows=60, n_features=6, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
