"""Drift-style graph augmentation: feature perturbation and edge dropping.

Perturbation adds a shared uniform bias b ~ U(-alpha, alpha) plus
element-wise noise N(0, sigma) with sigma ~ U(0, beta); b and sigma are
drawn once per call so a whole graph shares one drift regime.  Edge
dropping draws one keep bound a ~ U(gamma, 1) per call and keeps each edge
whose own draw m ~ U(0, 1) satisfies m <= a; gamma = 1 keeps everything.

It operates on normalized features, so alpha and beta are in z-score
units.  A combined call drops first, then perturbs the survivors; node
features are recomputed afterwards, and a graph that loses every edge
comes back as the empty sentinel (graph.is_empty) that training loops
skip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import TrafficGraph, edge_subgraph, replace_features


@dataclass
class AugmentParams:
    """Perturbation bounds (alpha, beta), keep bound (gamma) and a seed."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.alpha == 0.0 and self.beta == 0.0 and self.gamma == 1.0


def _rng(params: AugmentParams, rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else np.random.Generator(np.random.PCG64(params.seed))


def perturb_statistics(
    graph: TrafficGraph, params: AugmentParams, rng: np.random.Generator | None = None
) -> TrafficGraph:
    """Shift and jitter every edge feature; node features are recomputed.

    With alpha = beta = 0 the graph passes through bit-identical.
    """
    if graph.is_empty or (params.alpha == 0.0 and params.beta == 0.0):
        return graph
    gen = _rng(params, rng)
    b = gen.uniform(-params.alpha, params.alpha)
    sigma = gen.uniform(0.0, params.beta)
    eps = gen.normal(0.0, sigma, size=graph.features.shape) if sigma > 0 else 0.0
    return replace_features(graph, graph.features + eps + b)


def drop_edges(
    graph: TrafficGraph, params: AugmentParams, rng: np.random.Generator | None = None
) -> TrafficGraph:
    """Randomly discard edges; keep probability is the per-call draw a.

    gamma = 1 forces a = 1 and keeps the graph unchanged.  Surviving
    structure is compacted and node features recomputed.
    """
    if graph.is_empty or params.gamma == 1.0:
        return graph
    gen = _rng(params, rng)
    a = gen.uniform(params.gamma, 1.0)
    m = gen.uniform(0.0, 1.0, size=graph.edge_count)
    return edge_subgraph(graph, m <= a)


def augment(
    graph: TrafficGraph, params: AugmentParams, rng: np.random.Generator | None = None
) -> TrafficGraph:
    """Edge dropping followed by statistic perturbation of the survivors."""
    gen = _rng(params, rng)
    out = drop_edges(graph, params, gen)
    return perturb_statistics(out, params, gen)
