import numpy as np
import pytest

from ahsg.graphs import Graph, UNKNOWN


def two_class_toy(n_per_class=6, seed=0, p_in=0.7, p_out=0.1, d=5, sep=2.0):
    """Small homophilous two-class graph with Gaussian features.

    Dense enough to train a toy GCN in milliseconds; used for gradient
    checks and end-to-end smoke tests.
    """
    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    y = np.repeat([0, 1], n_per_class)
    A = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(i + 1, n):
            p = p_in if y[i] == y[j] else p_out
            if rng.random() < p:
                A[i, j] = A[j, i] = 1
    X = rng.normal(0.0, 1.0, size=(n, d))
    X[:, 0] += sep * (2 * y - 1)
    train = np.zeros(n, dtype=bool)
    train[::2] = True
    test = ~train
    return Graph(A, X, y, 2, train, test)


def separable_four_node():
    """Two 2-node cliques, one per class, with cleanly separated features."""
    A = np.array([
        [0, 1, 0, 0],
        [1, 0, 0, 0],
        [0, 0, 0, 1],
        [0, 0, 1, 0],
    ], dtype=np.int8)
    X = np.array([
        [2.0, 0.1],
        [1.8, -0.1],
        [-2.0, 0.2],
        [-1.9, 0.0],
    ])
    y = np.array([0, 0, 1, 1])
    train = np.array([True, True, True, True])
    test = np.zeros(4, dtype=bool)
    return Graph(A, X, y, 2, train, test)


@pytest.fixture
def toy_graph():
    return two_class_toy()


@pytest.fixture
def four_node_graph():
    return separable_four_node()
