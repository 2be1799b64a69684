import math

import numpy as np
import pytest

from safecons.errors import ConfigError
from safecons.graph import CommGraph, is_connected, laplacian, spectrum

from helpers import random_connected_graph


def test_two_node_laplacian_and_spectrum():
    g = CommGraph.from_edges(2, [(1, 2)])
    np.testing.assert_array_equal(laplacian(g), [[1, -1], [-1, 1]])
    np.testing.assert_allclose(spectrum(g), [0, 2], atol=1e-14)


def test_cycle_spectrum_matches_circulant_formula():
    g = CommGraph.from_edges(5, [(1, 2), (2, 3), (3, 4), (4, 5), (1, 5)])
    expected = sorted(2 - 2 * math.cos(2 * math.pi * k / 5) for k in range(5))
    np.testing.assert_allclose(spectrum(g), expected, atol=1e-12)
    assert g.lambda2 == pytest.approx(1.3820, abs=1e-4)
    assert g.lambda_max == pytest.approx(3.6180, abs=1e-4)
    np.testing.assert_allclose(laplacian(g).sum(axis=1), 0, atol=0)


def test_complete_graph_k3():
    g = CommGraph(np.ones((3, 3)) - np.eye(3))
    np.testing.assert_allclose(spectrum(g), [0, 3, 3], atol=1e-12)


def test_connectivity_predicate():
    assert is_connected(CommGraph.cycle(5))
    assert is_connected(CommGraph(np.zeros((1, 1))))
    two_parts = CommGraph.from_edges(4, [(1, 2), (3, 4)], require_connected=False)
    assert not is_connected(two_parts)
    assert two_parts.lambda2 == pytest.approx(0, abs=1e-12)


def test_disconnected_rejected_by_default():
    with pytest.raises(ConfigError, match="not connected"):
        CommGraph.from_edges(4, [(1, 2), (3, 4)])


@pytest.mark.parametrize("w, msg", [
    ([[0, 1], [2, 0]], "symmetric"),
    ([[1, 1], [1, 0]], "diagonal"),
    ([[0, -1], [-1, 0]], "nonnegative"),
    ([[0, 1, 0], [1, 0, 1]], "square"),
])
def test_weight_validation(w, msg):
    with pytest.raises(ConfigError, match=msg):
        CommGraph(np.array(w, dtype=float))


def test_bad_edge_index():
    with pytest.raises(ConfigError, match="invalid edge"):
        CommGraph.from_edges(3, [(1, 4)])


def test_weighted_edges_accepted():
    g = CommGraph.from_edges(3, [(1, 2, 0.5), (2, 3, 2.5)])
    assert laplacian(g)[1, 1] == pytest.approx(3.0)


def test_random_connected_graphs_spectral_properties():
    rng = np.random.default_rng(1)
    for _ in range(100):
        g = random_connected_graph(rng, int(rng.integers(2, 11)))
        lap = laplacian(g)
        n = g.n_agents
        assert np.max(np.abs(lap @ np.ones(n))) <= 1e-12 * n
        ev = spectrum(g)
        assert np.all(np.diff(ev) >= -1e-12)
        assert abs(ev[0]) <= 1e-8
        assert ev[1] > 1e-8
        assert is_connected(g) == (ev[1] > 1e-8)
