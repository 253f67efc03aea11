import numpy as np
import pytest

from subgatt.graphdata import Graph

# Filled by test_acceptance.py; printed once at the end of the session.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def graph_from_edges(n, edges, features=None, label=None):
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    x = np.eye(n) if features is None else np.asarray(features, dtype=float)
    return Graph(a, x, label)


def random_graph(rng, n, p=0.4, d=3):
    a = np.triu((rng.random((n, n)) < p).astype(float), 1)
    a = a + a.T
    return Graph(a, rng.normal(size=(n, d)), int(rng.integers(2)))


# Nodes a..g -> 0..6
SEVEN_NODE_EDGES = [(0, 1), (0, 3), (0, 5), (1, 2), (1, 5), (1, 6), (3, 4), (4, 5)]


@pytest.fixture
def seven_node_graph():
    return graph_from_edges(7, SEVEN_NODE_EDGES)


@pytest.fixture
def five_node_graph():
    rng = np.random.default_rng(0)
    return graph_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)], rng.normal(size=(5, 3)), 1)
