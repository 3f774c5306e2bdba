"""Weighted interaction graphs: random sampling and multilayer construction.

Weights are kept in their unit range [0, 1]; the simulators apply their own
strength scale internally, so stored graphs are always directly comparable
to inferred attention weights.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class InteractionGraph:
    """N x N non-negative weight matrix with a zero diagonal."""

    n_agents: int
    weights: np.ndarray
    symmetric: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.validate()

    def validate(self):
        n = self.n_agents
        if self.weights.shape != (n, n):
            raise ValueError(f"weight matrix shape {self.weights.shape} != ({n}, {n})")
        if np.any(np.diagonal(self.weights) != 0.0):
            raise ValueError("diagonal entries must be exactly zero")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be non-negative")
        if self.symmetric and not np.array_equal(self.weights, self.weights.T):
            raise ValueError("graph flagged symmetric but weights are not")


def sample_interaction_graph(n, p, symmetric=True, rng=None):
    """Sample a graph where each (unordered, if symmetric) off-diagonal pair
    carries, with probability p, a weight uniform in (0, 1], and 0 otherwise.
    """
    if n < 2:
        raise ValueError(f"need at least 2 agents, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    rng = _as_rng(rng)
    w = np.zeros((n, n), dtype=np.float64)
    if symmetric:
        iu, ju = np.triu_indices(n, k=1)
        mask = rng.random(iu.size) < p
        # 1 - U[0,1) so selected edges are strictly positive
        vals = (1.0 - rng.random(iu.size)) * mask
        w[iu, ju] = vals
        w[ju, iu] = vals
    else:
        io, jo = np.nonzero(~np.eye(n, dtype=bool))
        mask = rng.random(io.size) < p
        w[io, jo] = (1.0 - rng.random(io.size)) * mask
    return InteractionGraph(n_agents=n, weights=w, symmetric=symmetric)


def build_multilayer_graph(layer_sizes, intra_weight_range, inter_links=(), rng=None):
    """Densely connected layers with uniform intra-layer weights plus a sparse
    list of explicit (agent, agent, weight) inter-layer links.
    """
    rng = _as_rng(rng)
    lo, hi = intra_weight_range
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"intra-layer weight range must be within [0, 1], got ({lo}, {hi})")
    n = int(sum(layer_sizes))
    bounds = np.cumsum([0] + list(layer_sizes))
    layer_of = np.zeros(n, dtype=int)
    for li in range(len(layer_sizes)):
        layer_of[bounds[li]:bounds[li + 1]] = li

    w = np.zeros((n, n), dtype=np.float64)
    for li in range(len(layer_sizes)):
        a, b = bounds[li], bounds[li + 1]
        size = b - a
        iu, ju = np.triu_indices(size, k=1)
        vals = rng.uniform(lo, hi, iu.size)
        w[a + iu, a + ju] = vals
        w[a + ju, a + iu] = vals

    for (i, j, weight) in inter_links:
        if layer_of[i] == layer_of[j]:
            raise ConfigError(f"inter-layer link ({i}, {j}) has both endpoints in layer {layer_of[i]}")
        w[i, j] = weight
        w[j, i] = weight
    return InteractionGraph(n_agents=n, weights=w, symmetric=True)


def _as_rng(rng):
    if rng is None:
        return np.random.default_rng()
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    return rng
