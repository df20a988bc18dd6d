"""Pure-Python/numpy kernels behind graph construction.

Mirrors the compiled module in flowmoe._speedups; both must produce
bit-identical output, including float accumulation order (all source
endpoints first, then all destination endpoints).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def intern_pairs(src: list, dst: list) -> tuple[np.ndarray, np.ndarray, list]:
    """Map endpoint strings to dense indices in first-appearance order.

    Appearance order scans the flows once, source before destination.
    """
    n = len(src)
    table: dict = {}
    ips: list = []
    u = np.empty(n, dtype=np.int32)
    v = np.empty(n, dtype=np.int32)
    for i in range(n):
        s = src[i]
        idx = table.get(s)
        if idx is None:
            idx = len(ips)
            table[s] = idx
            ips.append(s)
        u[i] = idx
        d = dst[i]
        idx = table.get(d)
        if idx is None:
            idx = len(ips)
            table[d] = idx
            ips.append(d)
        v[i] = idx
    return u, v, ips


def accumulate_node_features(
    u: np.ndarray, v: np.ndarray, features: np.ndarray, n_nodes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-node sums of incident edge features and degree counts.

    Every edge contributes to both endpoints, so a self-loop counts twice.
    """
    deg = (
        np.bincount(u, minlength=n_nodes) + np.bincount(v, minlength=n_nodes)
    ).astype(np.float64)
    d = features.shape[1]
    sums = np.empty((n_nodes, d))
    for j in range(d):
        col = features[:, j]
        sums[:, j] = np.bincount(u, weights=col, minlength=n_nodes) + np.bincount(
            v, weights=col, minlength=n_nodes
        )
    return sums, deg
