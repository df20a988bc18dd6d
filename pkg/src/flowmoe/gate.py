"""Gating network: learns which expert to trust for each flow.

The gate consumes both per-flow embeddings and, by default, the mean
embedding of the whole window (graph readout), so it can pick up
window-level drift that a single flow does not show.  Supervision comes
from the experts themselves: the target is the lower-loss expert, and
only flows where the experts' predicted classes differ carry gradient
(agreeing flows teach nothing about which expert to prefer).

Prediction uses hard selection: the chosen expert's class is final.  A
weighted-summation variant (gate-blended expert latents through an extra
classification head) exists for comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import nn
from .augment import AugmentParams, augment
from .experts import ExpertBundle, ExpertOutputs, derive_seed, expert_latents, expert_predict
from .graph import TrafficGraph, embed_edges, embedding_dim, readout
from .ingest import NormStats

log = logging.getLogger(__name__)

EXPERT_NAMES = ("avg", "deg")


@dataclass
class GateModel:
    """Gate MLP plus whether it was trained with the graph readout block."""

    mlp: nn.MlpModel
    include_readout: bool = True


def gate_input_dim(feature_dim: int, include_readout: bool = True) -> int:
    per_flow = embedding_dim("avg", feature_dim) + embedding_dim("deg", feature_dim)
    return per_flow * 2 if include_readout else per_flow


def graph_readout(graph: TrafficGraph, stats: NormStats) -> np.ndarray:
    """Both readout blocks concatenated; cache this across batched calls."""
    return np.concatenate([readout(graph, "avg", stats), readout(graph, "deg", stats)])


def gate_inputs(
    graph: TrafficGraph,
    stats: NormStats,
    include_readout: bool = True,
    rows: np.ndarray | None = None,
    readout_cache: np.ndarray | None = None,
) -> np.ndarray:
    """Per-edge gate features: e_avg and e_deg, then the graph readouts.

    The readout blocks are computed over the whole graph regardless of
    ``rows`` and repeated onto every selected edge; pass ``readout_cache``
    (from graph_readout) to avoid recomputing them per batch.
    """
    e_avg = embed_edges(graph, "avg", stats, rows)
    e_deg = embed_edges(graph, "deg", stats, rows)
    blocks = [e_avg, e_deg]
    if include_readout:
        g = graph_readout(graph, stats) if readout_cache is None else readout_cache
        blocks.append(np.broadcast_to(g, (e_avg.shape[0], g.size)))
    return np.hstack(blocks)


def gate_input(
    graph: TrafficGraph, edge: int, stats: NormStats, include_readout: bool = True
) -> np.ndarray:
    return gate_inputs(graph, stats, include_readout, rows=np.array([edge]))[0]


@dataclass
class GateSupervision:
    """Per-edge routing target (0 = avg, 1 = deg) and disagreement mask."""

    labels: np.ndarray
    mask: np.ndarray

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())


def gating_labels(outputs: ExpertOutputs) -> GateSupervision:
    """Lower-loss expert per edge (ties go to avg); mask where classes differ."""
    if outputs.loss_avg is None or outputs.loss_deg is None:
        raise ValueError("expert outputs carry no losses; labels are required")
    labels = (outputs.loss_deg < outputs.loss_avg).astype(np.int64)
    mask = outputs.pred_avg != outputs.pred_deg
    return GateSupervision(labels, mask)


class GateLoss(NamedTuple):
    value: float
    n_masked: int

    @property
    def no_signal(self) -> bool:
        return self.n_masked == 0


def gate_loss(gate_probs: np.ndarray, supervision: GateSupervision) -> GateLoss:
    """Cross-entropy averaged over masked edges; zero when none are masked."""
    idx = np.nonzero(supervision.mask)[0]
    if idx.size == 0:
        return GateLoss(0.0, 0)
    losses = nn.cross_entropy(gate_probs[idx], supervision.labels[idx])
    return GateLoss(float(losses.mean()), idx.size)


def train_gate(
    graphs: list[TrafficGraph],
    bundle: ExpertBundle,
    params: AugmentParams,
    config: nn.TrainConfig,
    include_readout: bool = True,
    hidden=(64, 64),
) -> tuple[GateModel, list[dict]]:
    """Stage-two training: experts frozen, gate fit on disagreement edges.

    Each epoch re-augments each graph, recomputes expert outputs there,
    rebuilds the supervision, and takes one step on the masked edges.  An
    epoch with no masked edge anywhere logs a warning and changes nothing.
    """
    usable = [g for g in graphs if not g.is_empty]
    if not usable:
        raise ValueError("no non-empty training graphs")
    d = usable[0].feature_dim
    model = nn.mlp_init(
        [gate_input_dim(d, include_readout), *hidden, 2], derive_seed(config.seed, "gate")
    )
    opt = nn.Optimizer(config)
    history = []
    for epoch in range(config.epochs):
        loss_sum = 0.0
        masked = 0
        edges = 0
        for gi, g in enumerate(usable):
            rng = np.random.Generator(
                np.random.PCG64(derive_seed(config.seed, "gate-aug", epoch, gi))
            )
            ag = augment(g, params, rng)
            if ag.is_empty:
                continue
            edges += ag.edge_count
            sup = gating_labels(expert_predict(bundle, ag, config.batch_size))
            idx = np.nonzero(sup.mask)[0]
            if idx.size == 0:
                continue
            x = gate_inputs(ag, bundle.stats, include_readout, rows=idx)
            grads, loss = nn.mlp_backward(model, x, sup.labels[idx])
            opt.step(model, grads)
            loss_sum += loss * idx.size
            masked += idx.size
        if masked == 0:
            log.warning("gate epoch %d saw no expert disagreement; nothing learned", epoch)
        history.append(
            {
                "epoch": epoch,
                "loss": loss_sum / max(masked, 1),
                "masked_frac": masked / max(edges, 1),
            }
        )
    return GateModel(model, include_readout), history


@dataclass
class MoePrediction:
    """Routed per-flow decisions: final class, chosen expert, gate weights."""

    labels: np.ndarray
    chosen: np.ndarray
    gate_probs: np.ndarray

    def chosen_names(self) -> list[str]:
        return [EXPERT_NAMES[c] for c in self.chosen]


def moe_predict(
    bundle: ExpertBundle,
    gate: GateModel,
    graph: TrafficGraph,
    batch_size: int = 8192,
) -> MoePrediction:
    """Hard selection: each flow gets the class of its gate-chosen expert."""
    n = graph.edge_count
    outputs = expert_predict(bundle, graph, batch_size)
    step = batch_size if batch_size > 0 else max(n, 1)
    cache = graph_readout(graph, bundle.stats) if gate.include_readout and n else None
    probs_parts = []
    for i in range(0, n, step):
        rows = np.arange(i, min(i + step, n))
        x = gate_inputs(graph, bundle.stats, gate.include_readout, rows, cache)
        probs_parts.append(nn.mlp_forward(gate.mlp, x))
    gate_probs = (
        np.concatenate(probs_parts, axis=0) if probs_parts else np.empty((0, 2))
    )
    chosen = np.argmax(gate_probs, axis=1)
    preds = np.where(chosen == 0, outputs.pred_avg, outputs.pred_deg)
    return MoePrediction(preds, chosen, gate_probs)


def ws_blend(weights: np.ndarray, z_avg: np.ndarray, z_deg: np.ndarray) -> np.ndarray:
    """Convex combination of expert latents by gate weight."""
    return weights[:, 0:1] * z_avg + weights[:, 1:2] * z_deg


def ws_loss_and_grads(
    gate_mlp: nn.MlpModel,
    head: nn.MlpModel,
    bundle: ExpertBundle,
    graph: TrafficGraph,
    include_readout: bool = True,
    batch_size: int = 0,
):
    """Mean cross-entropy of the blended-latent classifier plus its gradients.

    Returns (loss, gate_grads, head_grads). Expert parameters are treated
    as constants; the chain runs through the head, the convex blend and the
    gate softmax Jacobian.
    """
    z_avg, z_deg = expert_latents(bundle, graph, batch_size)
    x = gate_inputs(graph, bundle.stats, include_readout)
    gate_acts, w = nn.forward_cache(gate_mlp, x)
    blend = ws_blend(w, z_avg, z_deg)
    head_acts, p = nn.forward_cache(head, blend)
    dlogits = nn.ce_dlogits(p, graph.labels)
    head_grads, dblend = nn.backward_cache(head, head_acts, dlogits, True)
    # chain rule through the convex blend and the gate softmax
    dw = np.stack([(dblend * z_avg).sum(axis=1), (dblend * z_deg).sum(axis=1)], axis=1)
    dgate_logits = w * (dw - (w * dw).sum(axis=1, keepdims=True))
    gate_grads, _ = nn.backward_cache(gate_mlp, gate_acts, dgate_logits)
    return nn.mean_cross_entropy(p, graph.labels), gate_grads, head_grads


def train_weighted_gate(
    graphs: list[TrafficGraph],
    bundle: ExpertBundle,
    params: AugmentParams,
    config: nn.TrainConfig,
    include_readout: bool = True,
    hidden=(64, 64),
    head_hidden=(32,),
) -> tuple[GateModel, nn.MlpModel, list[dict]]:
    """Weighted-summation alternative: no hard routing, no disagreement mask.

    The gate's softmax blends frozen expert latents and an extra head
    classifies the blend; gate and head are trained end-to-end on plain
    cross-entropy over every edge.
    """
    usable = [g for g in graphs if not g.is_empty]
    if not usable:
        raise ValueError("no non-empty training graphs")
    d = usable[0].feature_dim
    latent_dim = bundle.avg.layer_dims[-2]
    if bundle.deg.layer_dims[-2] != latent_dim:
        raise ValueError("experts must share their penultimate width")
    gate_mlp = nn.mlp_init(
        [gate_input_dim(d, include_readout), *hidden, 2], derive_seed(config.seed, "ws-gate")
    )
    head = nn.mlp_init([latent_dim, *head_hidden, 2], derive_seed(config.seed, "ws-head"))
    gate_opt = nn.Optimizer(config)
    head_opt = nn.Optimizer(config)
    history = []
    for epoch in range(config.epochs):
        loss_sum = 0.0
        edges = 0
        for gi, g in enumerate(usable):
            rng = np.random.Generator(
                np.random.PCG64(derive_seed(config.seed, "ws-aug", epoch, gi))
            )
            ag = augment(g, params, rng)
            if ag.is_empty:
                continue
            loss, gate_grads, head_grads = ws_loss_and_grads(
                gate_mlp, head, bundle, ag, include_readout, config.batch_size
            )
            head_opt.step(head, head_grads)
            gate_opt.step(gate_mlp, gate_grads)
            loss_sum += loss * ag.edge_count
            edges += ag.edge_count
        history.append({"epoch": epoch, "loss": loss_sum / max(edges, 1)})
    return GateModel(gate_mlp, include_readout), head, history


def moe_predict_weighted(
    bundle: ExpertBundle,
    gate: GateModel,
    head: nn.MlpModel,
    graph: TrafficGraph,
    batch_size: int = 8192,
) -> MoePrediction:
    """Classify from the weight-blended latents; chosen = heavier expert."""
    n = graph.edge_count
    step = batch_size if batch_size > 0 else max(n, 1)
    cache = graph_readout(graph, bundle.stats) if gate.include_readout and n else None
    labels_parts = []
    probs_parts = []
    for i in range(0, n, step):
        rows = np.arange(i, min(i + step, n))
        sub_avg = nn.penultimate(bundle.avg, embed_edges(graph, "avg", bundle.stats, rows))
        sub_deg = nn.penultimate(bundle.deg, embed_edges(graph, "deg", bundle.stats, rows))
        w = nn.mlp_forward(
            gate.mlp, gate_inputs(graph, bundle.stats, gate.include_readout, rows, cache)
        )
        p = nn.mlp_forward(head, ws_blend(w, sub_avg, sub_deg))
        labels_parts.append(np.argmax(p, axis=1))
        probs_parts.append(w)
    if not labels_parts:
        return MoePrediction(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty((0, 2)))
    w_all = np.concatenate(probs_parts, axis=0)
    return MoePrediction(
        np.concatenate(labels_parts), np.argmax(w_all, axis=1), w_all
    )
