import numpy as np
import pytest

from rain.errors import ConfigError
from rain.graphs import InteractionGraph, build_multilayer_graph, sample_interaction_graph


def test_p_zero_gives_empty_graph():
    g = sample_interaction_graph(5, 0.0, rng=0)
    assert np.array_equal(g.weights, np.zeros((5, 5)))


def test_p_one_gives_full_graph_with_positive_weights():
    g = sample_interaction_graph(5, 1.0, rng=1)
    off = ~np.eye(5, dtype=bool)
    assert np.all(g.weights[off] > 0.0)
    assert np.all(g.weights[off] <= 1.0)
    assert np.all(np.diagonal(g.weights) == 0.0)
    assert np.count_nonzero(g.weights) == 20


def test_edge_density_monte_carlo():
    # 10k draws at p=0.5: empirical density estimate has std ~8e-4
    rng = np.random.default_rng(7)
    total_edges = 0
    n_pairs = 45
    draws = 10_000
    for _ in range(draws):
        g = sample_interaction_graph(10, 0.5, rng=rng)
        total_edges += np.count_nonzero(np.triu(g.weights, k=1))
    density = total_edges / (draws * n_pairs)
    assert abs(density - 0.5) < 0.02


def test_symmetric_sampling_is_exactly_symmetric():
    for seed in range(5):
        g = sample_interaction_graph(8, 0.7, rng=seed)
        assert np.array_equal(g.weights, g.weights.T)


def test_asymmetric_sampling():
    g = sample_interaction_graph(30, 0.5, symmetric=False, rng=3)
    assert not np.array_equal(g.weights, g.weights.T)
    assert np.all(np.diagonal(g.weights) == 0.0)


def test_too_few_agents_rejected():
    with pytest.raises(ValueError):
        sample_interaction_graph(1, 0.5, rng=0)


def test_bad_probability_rejected():
    with pytest.raises(ValueError):
        sample_interaction_graph(5, 1.5, rng=0)


def test_validation_rejects_nonzero_diagonal():
    w = np.full((3, 3), 0.5)
    with pytest.raises(ValueError):
        InteractionGraph(3, w)


def test_validation_rejects_negative_weights():
    w = np.zeros((3, 3))
    w[0, 1] = w[1, 0] = -0.1
    with pytest.raises(ValueError):
        InteractionGraph(3, w)


def test_validation_rejects_asymmetry_when_flagged():
    w = np.zeros((3, 3))
    w[0, 1] = 0.5
    with pytest.raises(ValueError):
        InteractionGraph(3, w, symmetric=True)


def test_multilayer_weak_link_placement():
    g = build_multilayer_graph([5, 5], (0.5, 1.0), [(3, 8, 0.3)], rng=0)
    assert g.weights[3, 8] == 0.3
    assert g.weights[8, 3] == 0.3


def test_multilayer_degenerate_range_gives_block_of_ones():
    g = build_multilayer_graph([2, 2], (1.0, 1.0), [], rng=0)
    expect = np.zeros((4, 4))
    expect[0, 1] = expect[1, 0] = 1.0
    expect[2, 3] = expect[3, 2] = 1.0
    assert np.array_equal(g.weights, expect)


def test_multilayer_cross_block_zero_except_links():
    g = build_multilayer_graph([3, 3], (0.5, 1.0), [(0, 4, 0.2)], rng=2)
    cross = g.weights[:3, 3:]
    expect = np.zeros((3, 3))
    expect[0, 1] = 0.2   # agent 0 -> agent 4 is cross-block cell (0, 1)
    assert np.array_equal(cross, expect)
    intra_top = g.weights[:3, :3][~np.eye(3, dtype=bool)]
    assert np.all((intra_top >= 0.5) & (intra_top <= 1.0))


def test_multilayer_same_layer_link_rejected():
    with pytest.raises(ConfigError):
        build_multilayer_graph([5, 5], (0.5, 1.0), [(0, 3, 0.2)], rng=0)
