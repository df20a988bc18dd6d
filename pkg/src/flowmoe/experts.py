"""The two node-feature experts and their augmented training loop.

Each expert is an MLP over one edge-embedding kind: the "avg" expert sees
neighborhood feature means, the "deg" expert sees degree context.  They
are optimized jointly on the summed per-edge cross-entropies, one
optimizer step per training graph; since neither loss term touches the
other expert's parameters, the joint loop matches training each alone.

Every epoch re-augments every training graph with a fresh derived seed,
so the experts see a new drift regime per pass.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from . import nn
from .augment import AugmentParams, augment
from .graph import TrafficGraph, embed_edges, embedding_dim
from .ingest import NormStats

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (64, 64)


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of ints/strings (run-to-run identical).

    The length prefix keeps trailing zeros significant; SeedSequence alone
    zero-pads its entropy, which would alias (x,) and (x, 0).
    """
    ints = [len(parts)]
    ints += [zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExpertBundle:
    """Both trained experts plus the normalization they were trained under."""

    avg: nn.MlpModel
    deg: nn.MlpModel
    stats: NormStats

    def model_for(self, kind: str) -> nn.MlpModel:
        if kind == "avg":
            return self.avg
        if kind == "deg":
            return self.deg
        raise ValueError(f"no expert for kind {kind!r}")


@dataclass
class ExpertOutputs:
    """Per-edge expert probabilities, with losses when labels were known."""

    p_avg: np.ndarray
    p_deg: np.ndarray
    loss_avg: np.ndarray | None = None
    loss_deg: np.ndarray | None = None

    @property
    def pred_avg(self) -> np.ndarray:
        return np.argmax(self.p_avg, axis=1)

    @property
    def pred_deg(self) -> np.ndarray:
        return np.argmax(self.p_deg, axis=1)


def expert_predict(
    bundle: ExpertBundle, graph: TrafficGraph, batch_size: int = 8192
) -> ExpertOutputs:
    """Run both experts over every edge; losses are filled when labeled."""
    p_avg = _predict_kind(bundle.avg, graph, "avg", bundle.stats, batch_size)
    p_deg = _predict_kind(bundle.deg, graph, "deg", bundle.stats, batch_size)
    out = ExpertOutputs(p_avg, p_deg)
    if graph.labels is not None:
        out.loss_avg, out.loss_deg = expert_losses(out, graph.labels)
    return out


def predict_kind(
    model: nn.MlpModel,
    graph: TrafficGraph,
    kind: str,
    stats: NormStats,
    batch_size: int = 8192,
) -> np.ndarray:
    """Class probabilities from a single expert over one embedding kind."""
    return _predict_kind(model, graph, kind, stats, batch_size)


def _predict_kind(
    model: nn.MlpModel, graph: TrafficGraph, kind: str, stats: NormStats, batch_size: int
) -> np.ndarray:
    """Forward one expert with embeddings built per batch to bound memory."""
    n = graph.edge_count
    if n == 0:
        return np.empty((0, 2))
    if batch_size <= 0 or n <= batch_size:
        return nn.mlp_forward(model, embed_edges(graph, kind, stats))
    parts = []
    for i in range(0, n, batch_size):
        rows = np.arange(i, min(i + batch_size, n))
        parts.append(nn.mlp_forward(model, embed_edges(graph, kind, stats, rows)))
    return np.concatenate(parts, axis=0)


def expert_latents(
    bundle: ExpertBundle, graph: TrafficGraph, batch_size: int = 8192
) -> tuple[np.ndarray, np.ndarray]:
    """Penultimate-layer activations of both experts (equal width)."""
    outs = []
    for kind in ("avg", "deg"):
        model = bundle.model_for(kind)
        n = graph.edge_count
        parts = []
        step = batch_size if batch_size > 0 else max(n, 1)
        for i in range(0, n, step):
            rows = np.arange(i, min(i + step, n))
            parts.append(nn.penultimate(model, embed_edges(graph, kind, bundle.stats, rows)))
        outs.append(
            np.concatenate(parts, axis=0)
            if parts
            else np.empty((0, model.layer_dims[-2]))
        )
    return outs[0], outs[1]


def expert_losses(
    outputs: ExpertOutputs, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge cross-entropy of each expert against the shared labels."""
    return nn.cross_entropy(outputs.p_avg, labels), nn.cross_entropy(outputs.p_deg, labels)


def expert_training_loss(loss_avg: np.ndarray, loss_deg: np.ndarray) -> float:
    """Mean over edges of the summed per-expert losses."""
    return float((loss_avg + loss_deg).mean())


def _class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse-frequency weight per edge."""
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    counts = np.maximum(counts, 1.0)
    w = labels.size / (2.0 * counts)
    return w[labels]


def _train_models(
    kinds: list[str],
    graphs: list[TrafficGraph],
    stats: NormStats,
    params: AugmentParams,
    config: nn.TrainConfig,
    hidden,
    class_weights: bool,
):
    """Shared loop: one optimizer step per (epoch, graph) for each kind."""
    usable = [g for g in graphs if not g.is_empty]
    if not usable:
        raise ValueError("no non-empty training graphs")
    if any(g.labels is None for g in usable):
        raise ValueError("training graphs must be labeled")
    d = usable[0].feature_dim
    models = {
        kind: nn.mlp_init([embedding_dim(kind, d), *hidden, 2], derive_seed(config.seed, kind))
        for kind in kinds
    }
    opts = {kind: nn.Optimizer(config) for kind in kinds}
    history = []
    for epoch in range(config.epochs):
        loss_sum = 0.0
        edge_sum = 0
        for gi, g in enumerate(usable):
            rng = np.random.Generator(
                np.random.PCG64(derive_seed(config.seed, "aug", epoch, gi))
            )
            ag = augment(g, params, rng)
            if ag.is_empty:
                continue
            weights = _class_weights(ag.labels) if class_weights else None
            n = ag.edge_count
            step = n if n < config.full_batch_limit else config.batch_size
            for i in range(0, n, step):
                rows = np.arange(i, min(i + step, n))
                batch_loss = 0.0
                for kind in kinds:
                    x = embed_edges(ag, kind, stats, rows)
                    y = ag.labels[rows]
                    w = None if weights is None else weights[rows]
                    grads, loss = nn.mlp_backward(models[kind], x, y, w)
                    opts[kind].step(models[kind], grads)
                    batch_loss += loss
                loss_sum += batch_loss * len(rows)
                edge_sum += len(rows)
        history.append(
            {"epoch": epoch, "loss": loss_sum / max(edge_sum, 1), "edges": edge_sum}
        )
    return models, history


def train_experts(
    graphs: list[TrafficGraph],
    stats: NormStats,
    params: AugmentParams,
    config: nn.TrainConfig,
    hidden=DEFAULT_HIDDEN,
    class_weights: bool = False,
) -> tuple[ExpertBundle, list[dict]]:
    """Train both experts under per-epoch augmentation.

    Zero epochs returns the freshly initialized bundle unchanged.
    """
    models, history = _train_models(
        ["avg", "deg"], graphs, stats, params, config, hidden, class_weights
    )
    return ExpertBundle(models["avg"], models["deg"], stats), history


def train_kind_expert(
    kind: str,
    graphs: list[TrafficGraph],
    stats: NormStats,
    params: AugmentParams,
    config: nn.TrainConfig,
    hidden=DEFAULT_HIDDEN,
    class_weights: bool = False,
) -> tuple[nn.MlpModel, list[dict]]:
    """Train a single expert over one embedding kind (avg, deg, or cat)."""
    models, history = _train_models(
        [kind], graphs, stats, params, config, hidden, class_weights
    )
    return models[kind], history
