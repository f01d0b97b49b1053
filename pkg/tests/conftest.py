import numpy as np
import pytest

from graphcnn.graph import Variant, from_dense


def random_dense(rng, n, p=0.4, directed=False, weighted=True):
    a = np.where(rng.random((n, n)) < p, rng.uniform(0.5, 1.5, (n, n)) if weighted else 1.0, 0.0)
    np.fill_diagonal(a, 0.0)
    if not directed:
        a = np.triu(a, 1) + np.triu(a, 1).T
    return a


def scaled(a):
    return from_dense(a / np.abs(np.linalg.eigvals(a)).max(), Variant.SCALED_ADJACENCY)


def path_graph(n):
    return from_dense(np.eye(n, k=1) + np.eye(n, k=-1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# PASS/FAIL lines from test_acceptance.py, echoed after the run so they are not captured away
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
