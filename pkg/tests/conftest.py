import numpy as np
import pytest
import scipy.sparse as sp

from dmbagcn.graph import Graph


def random_graph(n: int, p: float, seed: int, n_feat: int = 4, n_classes: int = 2) -> Graph:
    """Erdos-Renyi-ish fixture graph; retries until every node has a neighbor."""
    rng = np.random.default_rng(seed)
    while True:
        upper = np.triu(rng.random((n, n)) < p, k=1)
        adj = upper | upper.T
        if adj.any(axis=1).all():
            break
    features = rng.normal(size=(n, n_feat))
    labels = rng.integers(0, n_classes, size=n)
    return Graph(adjacency=sp.csr_matrix(adj.astype(np.float64)), features=features,
                 labels=labels)


@pytest.fixture
def two_node_graph():
    adj = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    return Graph(adjacency=adj, features=np.array([[1.0], [0.0]]),
                 labels=np.array([0, 1]))


@pytest.fixture
def small_graph():
    return random_graph(8, 0.4, seed=42)
