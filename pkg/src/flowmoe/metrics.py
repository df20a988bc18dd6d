"""Binary classification metrics and the oracle expert selector.

The malicious class (label 1) is the positive class.  Undefined ratios
(0/0) are reported as 0; gate accuracy is measured only over edges where
the experts disagree and is None when there are none.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .experts import ExpertOutputs, expert_losses
from .gate import GateSupervision, gating_labels


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    acc: float
    precision: float
    recall: float
    f1: float
    acc_gate: float | None = None
    n_masked: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def compute_metrics(
    predicted: np.ndarray,
    labels: np.ndarray,
    chosen: np.ndarray | None = None,
    supervision: GateSupervision | None = None,
) -> MetricsReport:
    """Confusion counts and derived rates; optionally gate routing accuracy.

    ``chosen`` is the per-edge selected expert and ``supervision`` the
    routing target/mask; both are needed for acc_gate.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predicted.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    tp = int(((predicted == 1) & (labels == 1)).sum())
    fp = int(((predicted == 1) & (labels == 0)).sum())
    tn = int(((predicted == 0) & (labels == 0)).sum())
    fn = int(((predicted == 0) & (labels == 1)).sum())
    n = max(len(labels), 1)
    acc = (tp + tn) / n
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    acc_gate = None
    n_masked = 0
    if chosen is not None and supervision is not None:
        idx = np.nonzero(supervision.mask)[0]
        n_masked = idx.size
        if n_masked:
            acc_gate = float((np.asarray(chosen)[idx] == supervision.labels[idx]).mean())
    return MetricsReport(tp, fp, tn, fn, acc, precision, recall, f1, acc_gate, n_masked)


def oracle_select(
    outputs: ExpertOutputs, labels: np.ndarray
) -> tuple[np.ndarray, MetricsReport]:
    """Route every edge to its lower-loss expert (ties to avg).

    This is the best any router limited to these two experts can do, so
    its accuracy is an upper bound for the learned gate and never falls
    below either single expert.
    """
    if outputs.loss_avg is None or outputs.loss_deg is None:
        loss_avg, loss_deg = expert_losses(outputs, labels)
        outputs = ExpertOutputs(outputs.p_avg, outputs.p_deg, loss_avg, loss_deg)
    sup = gating_labels(outputs)
    preds = np.where(sup.labels == 0, outputs.pred_avg, outputs.pred_deg)
    report = compute_metrics(preds, labels, chosen=sup.labels, supervision=sup)
    return preds, report
