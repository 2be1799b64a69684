"""Shared builders for the test-suite."""

import numpy as np

from safecons.graph import CommGraph
from safecons.plant import LinearAgent, check_transmission_zeros

REF_K1 = [
    [[-1.63, 0.97, 0.24], [0.28, -3, -1.54]],
    [[-1.56, 1.04, 0.56], [0.53, -2.6, -1.37]],
    [[-1.48, 1.15, 0.92], [0.719, -2.34, -1.11]],
    [[-1.33, 1.33, 1.38], [0.78, -2.2, -0.84]],
    [[-3.09, 1.48, 0.86], [2.41, -1.12, 1.36]],
]

REF_K2_TABLE = [
    [[1.7, -1.79], [-0.42, 2.65]],
    [[1.68, -1.7], [-0.61, 2.41]],
    [[1.63, -1.69], [-0.72, 2.28]],
    [[1.52, -1.73], [-0.76, 2.26]],
    [[3.2, -2.16], [-2.11, 2.01]],
]


def ref_agent(i):
    return LinearAgent(
        [[0, 1, 0], [0, 0, 1], [-1, -2, -2 - i]],
        [[1, 0], [0, 1], [1, 1]],
        [[1, 0, 0], [0, 1, 0]],
    )


def random_connected_graph(rng, n):
    """Random spanning tree plus random extra edges, random positive weights."""
    w = np.zeros((n, n))
    order = rng.permutation(n)
    for k in range(1, n):
        i, j = order[k], order[rng.integers(0, k)]
        w[i, j] = w[j, i] = rng.uniform(0.1, 2.0)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.uniform() < 0.3:
                w[i, j] = w[j, i] = rng.uniform(0.1, 2.0)
    return CommGraph(w)


def random_agent(rng, n=None, m=None, p=None):
    """Random agent satisfying the rank condition (redrawn until it does)."""
    while True:
        p_ = p or int(rng.integers(1, 3))
        m_ = m or int(rng.integers(p_, p_ + 2))
        n_ = n or int(rng.integers(max(p_, 1), 6))
        A = rng.normal(size=(n_, n_))
        B = rng.normal(size=(n_, m_))
        C = rng.normal(size=(p_, n_))
        agent = LinearAgent(A, B, C)
        if check_transmission_zeros(agent) and agent.is_controllable():
            return agent
