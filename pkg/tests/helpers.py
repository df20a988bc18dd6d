"""Reference implementations and toy data shared across the test suite.

The oracles here are deliberately naive (double loops, fsum, explicit
two-pass statistics) so they stay independent of the library's vectorized
code paths.
"""

from __future__ import annotations

import math

import numpy as np

from flowmoe import nn
from flowmoe.graph import TrafficGraph, build_graph, compute_node_features
from flowmoe.ingest import FlowTable, NormStats, fit_normalization


def node_feature_oracle(graph: TrafficGraph) -> tuple[np.ndarray, np.ndarray]:
    """Naive per-edge sweep over sources, then destinations.

    Accumulation order (all source contributions first, destination
    contributions second, sequential adds within each sweep) matches the
    documented kernel contract, so results are comparable bit for bit.
    """
    n, d = graph.node_count, graph.feature_dim
    sums_u = np.zeros((n, d))
    sums_v = np.zeros((n, d))
    deg = np.zeros(n)
    for e in range(graph.edge_count):
        sums_u[graph.u[e]] += graph.features[e]
        deg[graph.u[e]] += 1.0
    for e in range(graph.edge_count):
        sums_v[graph.v[e]] += graph.features[e]
        deg[graph.v[e]] += 1.0
    sums = sums_u + sums_v
    return sums / deg[:, None], deg


def two_pass_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean and population standard deviation, computed explicitly."""
    n = x.shape[0]
    mean = np.array([math.fsum(col) / n for col in x.T])
    var = np.array([math.fsum((v - m) ** 2 for v in x.T[i]) for i, m in enumerate(mean)])
    std = np.sqrt(var / n)
    return mean, std


def fsum_mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def manual_softmax(logits) -> np.ndarray:
    """Row softmax via math.exp, independent of the library implementation."""
    out = []
    for row in np.atleast_2d(logits):
        exps = [math.exp(z) for z in row]
        total = math.fsum(exps)
        out.append([e / total for e in exps])
    return np.array(out)


def make_table(rows, feature_dim=None) -> FlowTable:
    """FlowTable from (src, dst, ts, features, label) tuples."""
    src = [r[0] for r in rows]
    dst = [r[1] for r in rows]
    ts = np.array([float(r[2]) for r in rows])
    features = np.array([r[3] for r in rows], dtype=np.float64)
    if features.ndim == 1:
        features = features.reshape(len(rows), -1)
    labels = None
    if rows and len(rows[0]) > 4 and rows[0][4] is not None:
        labels = np.array([int(r[4]) for r in rows], dtype=np.int64)
    return FlowTable(src, dst, ts, features, labels)


def graph_of(rows) -> TrafficGraph:
    return compute_node_features(build_graph(make_table(rows)))


def toy_windows(n_windows=3, seed=0, feature_dim=4) -> list[FlowTable]:
    """Small labeled windows separable by features and by degrees.

    Benign flows run between low-degree client/server pairs with feature
    mean -0.8; malicious sources fan out to one victim per window with
    feature mean +0.8.  Both experts can reach high accuracy quickly.
    """
    windows = []
    rng = np.random.Generator(np.random.PCG64(seed))
    for w in range(n_windows):
        rows = []
        t0 = 100.0 * w
        for i in range(60):
            f = rng.normal(-0.8, 0.6, size=feature_dim)
            rows.append((f"10.0.{w}.{i}", f"10.1.{w}.{i % 6}", t0 + 0.1 * i, f, 0))
        for s in range(4):
            for k in range(15):
                f = rng.normal(0.8, 0.6, size=feature_dim)
                rows.append((f"10.2.{w}.{s}", f"10.3.{w}.0", t0 + 6.0 + 0.05 * k, f, 1))
        windows.append(make_table(rows))
    return windows


def normalized_toy_graphs(n_train=3, n_test=2, seed=0):
    """Full small pipeline: normalize on train, build graphs, fit deg stats."""
    from flowmoe.graph import graphs_from_windows, update_degree_stats
    from flowmoe.ingest import apply_normalization

    windows = toy_windows(n_train + n_test, seed=seed)
    train, test = windows[:n_train], windows[n_train:]
    stacked = np.vstack([w.features for w in train])
    stats = fit_normalization(stacked)
    train = [apply_normalization(w, stats) for w in train]
    test = [apply_normalization(w, stats) for w in test]
    train_graphs = graphs_from_windows(train)
    test_graphs = graphs_from_windows(test)
    stats = update_degree_stats(stats, train_graphs)
    return train_graphs, test_graphs, stats


def forced_mlp(in_dim: int, logits) -> nn.MlpModel:
    """Single-layer model with zero weights and a fixed logit bias.

    Outputs softmax(logits) for every input row, regardless of content.
    """
    logits = np.asarray(logits, dtype=np.float64)
    model = nn.mlp_init([in_dim, logits.size], seed=0)
    model.weights[0][:] = 0.0
    model.biases[0][:] = logits
    return model


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float((np.asarray(pred) == np.asarray(labels)).mean())
