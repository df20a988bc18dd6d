"""Flow multigraphs and the node/edge feature spaces derived from them.

Nodes are IP endpoints, edges are flows; parallel edges and self-loops are
kept.  Two node feature kinds exist side by side: the mean of incident
edge feature vectors ("avg") and the raw degree counting every incident
edge ("deg").  Edge embeddings concatenate endpoint features with the
flow's own statistics vector; degrees enter embeddings as z-scored log1p
values using training-set statistics.

Graphs are treated as immutable once their node features are computed;
every transformation returns a new instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .ingest import FlowRecord, FlowTable, NormStats, STD_FLOOR

EMBED_KINDS = ("avg", "deg", "cat")


@dataclass
class TrafficGraph:
    """One traffic window as a directed multigraph with edge features."""

    node_count: int
    ips: list[str]
    node_of_ip: dict
    u: np.ndarray
    v: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None
    flow_ids: np.ndarray
    h_avg: np.ndarray | None = None
    h_deg: np.ndarray | None = None

    @property
    def edge_count(self) -> int:
        return len(self.u)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.edge_count == 0


def empty_graph(feature_dim: int, labeled: bool = True) -> TrafficGraph:
    """The zero-edge sentinel trainers skip (e.g. after dropping every edge)."""
    return TrafficGraph(
        node_count=0,
        ips=[],
        node_of_ip={},
        u=np.empty(0, dtype=np.int32),
        v=np.empty(0, dtype=np.int32),
        features=np.empty((0, feature_dim)),
        labels=np.empty(0, dtype=np.int64) if labeled else None,
        flow_ids=np.empty(0, dtype=np.int64),
        h_avg=np.empty((0, feature_dim)),
        h_deg=np.empty(0),
    )


def build_graph(flows) -> TrafficGraph:
    """Construct the multigraph for one window of flows.

    Endpoints are interned in first-appearance order, source before
    destination.  Node features stay unset until compute_node_features.
    """
    if isinstance(flows, list):
        flows = FlowTable.from_records(flows)
    if not isinstance(flows, FlowTable):
        raise TypeError(f"expected FlowTable or list of FlowRecord, got {type(flows)}")
    features = np.asarray(flows.features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    u, v, ips = kernels.intern_pairs(flows.src, flows.dst)
    labels = None
    if flows.labels is not None:
        labels = np.asarray(flows.labels, dtype=np.int64)
        bad = ~np.isin(labels, (0, 1))
        if bad.any():
            raise ValueError(f"labels outside {{0, 1}} at rows {np.nonzero(bad)[0][:5]}")
    return TrafficGraph(
        node_count=len(ips),
        ips=ips,
        node_of_ip={ip: i for i, ip in enumerate(ips)},
        u=u,
        v=v,
        features=features,
        labels=labels,
        flow_ids=np.asarray(flows.flow_ids, dtype=np.int64),
    )


def compute_node_features(graph: TrafficGraph) -> TrafficGraph:
    """Fill h_avg and h_deg from the current edge set.

    h_avg[n] is the mean feature vector over all incident edges (incoming
    plus outgoing); h_deg[n] is the incident edge count.  A self-loop
    contributes its features twice and adds two to the degree.
    """
    if graph.edge_count == 0:
        graph.h_avg = np.empty((0, graph.feature_dim))
        graph.h_deg = np.empty(0)
        return graph
    sums, deg = kernels.accumulate_node_features(
        graph.u, graph.v, graph.features, graph.node_count
    )
    graph.h_avg = sums / deg[:, None]
    graph.h_deg = deg
    return graph


def edge_subgraph(graph: TrafficGraph, keep: np.ndarray) -> TrafficGraph:
    """Graph restricted to the edges where ``keep`` is true.

    Nodes losing every edge are removed and indices are compacted in old
    index order.  Node features are recomputed for the survivors.
    """
    keep = np.asarray(keep, dtype=bool)
    if not keep.any():
        return empty_graph(graph.feature_dim, labeled=graph.labels is not None)
    u = graph.u[keep]
    v = graph.v[keep]
    used = np.zeros(graph.node_count, dtype=bool)
    used[u] = True
    used[v] = True
    old_ids = np.nonzero(used)[0]
    remap = np.full(graph.node_count, -1, dtype=np.int32)
    remap[old_ids] = np.arange(len(old_ids), dtype=np.int32)
    ips = [graph.ips[i] for i in old_ids]
    sub = TrafficGraph(
        node_count=len(old_ids),
        ips=ips,
        node_of_ip={ip: i for i, ip in enumerate(ips)},
        u=remap[u],
        v=remap[v],
        features=graph.features[keep],
        labels=None if graph.labels is None else graph.labels[keep],
        flow_ids=graph.flow_ids[keep],
    )
    return compute_node_features(sub)


def replace_features(graph: TrafficGraph, features: np.ndarray) -> TrafficGraph:
    """New graph with the same topology but different edge features."""
    out = TrafficGraph(
        node_count=graph.node_count,
        ips=graph.ips,
        node_of_ip=graph.node_of_ip,
        u=graph.u,
        v=graph.v,
        features=features,
        labels=graph.labels,
        flow_ids=graph.flow_ids,
    )
    return compute_node_features(out)


def embedding_dim(kind: str, feature_dim: int) -> int:
    if kind == "avg":
        return 3 * feature_dim
    if kind == "deg":
        return feature_dim + 2
    if kind == "cat":
        return 3 * feature_dim + 2
    raise ValueError(f"unknown embedding kind: {kind!r}")


def _node_parts(graph: TrafficGraph, kind: str, stats: NormStats) -> list[np.ndarray]:
    """Per-node feature blocks used by the given embedding kind."""
    if graph.h_avg is None or graph.h_deg is None:
        raise ValueError("node features not computed; call compute_node_features first")
    if kind == "avg":
        return [graph.h_avg]
    ndeg = stats.normalize_degrees(graph.h_deg)[:, None]
    if kind == "deg":
        return [ndeg]
    if kind == "cat":
        return [graph.h_avg, ndeg]
    raise ValueError(f"unknown embedding kind: {kind!r}")


def embed_edges(
    graph: TrafficGraph, kind: str, stats: NormStats, rows: np.ndarray | None = None
) -> np.ndarray:
    """Edge embedding matrix: source block, destination block, edge features.

    ``rows`` selects an edge subset (used by batched inference).
    """
    parts = _node_parts(graph, kind, stats)
    u = graph.u if rows is None else graph.u[rows]
    v = graph.v if rows is None else graph.v[rows]
    f = graph.features if rows is None else graph.features[rows]
    blocks = [p[u] for p in parts] + [p[v] for p in parts] + [f]
    return np.hstack(blocks)


def flow_embedding(graph: TrafficGraph, edge: int, kind: str, stats: NormStats) -> np.ndarray:
    """Embedding vector of a single edge."""
    return embed_edges(graph, kind, stats, rows=np.array([edge]))[0]


def readout(graph: TrafficGraph, kind: str, stats: NormStats) -> np.ndarray:
    """Mean of all edge embeddings of the given kind.

    Computed blockwise so no edge-by-dim matrix is materialized.
    """
    if graph.is_empty:
        raise ValueError("readout of an empty graph is undefined")
    parts = _node_parts(graph, kind, stats)
    blocks = (
        [p[graph.u].mean(axis=0) for p in parts]
        + [p[graph.v].mean(axis=0) for p in parts]
        + [graph.features.mean(axis=0)]
    )
    return np.concatenate(blocks)


def update_degree_stats(stats: NormStats, graphs) -> NormStats:
    """Fill deg_mean/deg_std from training graphs (log1p, population std).

    Call with the training windows only; evaluation reuses the result.
    """
    logs = [np.log1p(g.h_deg) for g in graphs if not g.is_empty]
    if not logs:
        raise ValueError("no non-empty graphs to fit degree stats on")
    pooled = np.concatenate(logs)
    return NormStats(
        mean=stats.mean.copy(),
        std=stats.std.copy(),
        deg_mean=float(pooled.mean()),
        deg_std=float(max(pooled.std(), STD_FLOOR)),
    )


def dump_graph(graph: TrafficGraph, edges_path, nodes_path) -> None:
    """Write the edge list (src,dst,f...,label) and the node table."""
    with open(edges_path, "w") as fh:
        cols = ["src", "dst", *(f"f{j}" for j in range(graph.feature_dim))]
        if graph.labels is not None:
            cols.append("label")
        fh.write(",".join(cols) + "\n")
        for i in range(graph.edge_count):
            parts = [str(int(graph.u[i])), str(int(graph.v[i]))]
            parts.extend(repr(float(x)) for x in graph.features[i])
            if graph.labels is not None:
                parts.append(str(int(graph.labels[i])))
            fh.write(",".join(parts) + "\n")
    with open(nodes_path, "w") as fh:
        fh.write("node,ip,degree\n")
        for i, ip in enumerate(graph.ips):
            deg = 0.0 if graph.h_deg is None else float(graph.h_deg[i])
            fh.write(f"{i},{ip},{deg:g}\n")


def graphs_from_windows(windows: list[FlowTable]) -> list[TrafficGraph]:
    """Build and feature-fill one graph per flow window."""
    return [compute_node_features(build_graph(w)) for w in windows]
