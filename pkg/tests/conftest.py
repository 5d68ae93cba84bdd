import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from gatelab.graph import Graph, add_self_loops, erdos_renyi  # noqa: E402
from gatelab.initialization import InitPolicy, init_network  # noqa: E402
from gatelab.layers import NetworkSpec  # noqa: E402


def random_graph(n, p, seed, self_loops=True):
    g = erdos_renyi(n, p, seed)
    return add_self_loops(g) if self_loops else g


def random_network(kind, depth, hidden, in_dim, num_classes, seed, attention="xavier_uniform", bias=False):
    """Network with non-zero attention (and bias) so every balance-law term is exercised."""
    spec = NetworkSpec.uniform(kind, depth, num_classes, hidden, bias=bias)
    params = init_network(spec, in_dim, InitPolicy(seed=seed, attention_scheme=attention))
    if bias:
        rng = np.random.default_rng(seed + 1)
        for p in params:
            p.b = rng.standard_normal(p.b.shape)
    return spec, params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path_graph():
    return Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
