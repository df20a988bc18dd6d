"""End-to-end training: data preparation, the two-stage run, checkpoints.

Preparation order matters and is fixed here: fit feature normalization on
the training split only, normalize both splits, window, build graphs, then
fit degree statistics on the training graphs.  Stage one fits the two
experts under light augmentation; stage two freezes them and fits the
selector under heavy augmentation.  A single-stage variant that steps
experts and selector together on each graph exists for comparison.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels, nn
from .augment import augment
from .config import RunConfig
from .container import DetectorContainer, load_container, save_container
from .errors import TrainingError
from .experts import ExpertBundle, ExpertOutputs, derive_seed, train_experts
from .gate import (
    GateModel,
    gate_input_dim,
    gate_inputs,
    gating_labels,
    graph_readout,
    train_gate,
)
from .graph import embed_edges, embedding_dim, graphs_from_windows, update_degree_stats
from .ingest import (
    FlowTable,
    apply_normalization,
    fit_normalization,
    parse_flow_csv,
    window_table,
)
from .synth import generate_synthetic

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    """Normalized windows and graphs for one train/test split."""

    train_graphs: list
    test_graphs: list
    stats: object
    train_windows: list
    test_windows: list

    @property
    def feature_dim(self) -> int:
        return len(self.stats.mean)


def split_by_time(table: FlowTable, fraction: float = 0.5):
    """Earliest ``fraction`` of flows by timestamp go to training.

    Row order inside each split stays the file order; ties on the
    boundary timestamp are broken by arrival.
    """
    n = len(table)
    if n < 2:
        raise ValueError("need at least two flows to split")
    order = np.argsort(table.timestamps, kind="stable")
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return table.take(train_idx), table.take(test_idx)


def prepare_from_windows(train_windows, test_windows) -> PreparedData:
    """Normalize (training statistics only), build graphs, fit degree stats."""
    if not train_windows or not test_windows:
        raise ValueError("both splits need at least one window")
    stats = fit_normalization(np.vstack([w.features for w in train_windows]))
    train_norm = [apply_normalization(w, stats) for w in train_windows]
    test_norm = [apply_normalization(w, stats) for w in test_windows]
    train_graphs = graphs_from_windows(train_norm)
    test_graphs = graphs_from_windows(test_norm)
    stats = update_degree_stats(stats, train_graphs)
    return PreparedData(train_graphs, test_graphs, stats, train_norm, test_norm)


def prepare_from_tables(
    train_table: FlowTable, test_table: FlowTable, window_seconds: float
) -> PreparedData:
    return prepare_from_windows(
        window_table(train_table, window_seconds),
        window_table(test_table, window_seconds),
    )


def prepare_data(config: RunConfig) -> PreparedData:
    """Build the split described by the config (synthetic or CSV)."""
    if config["data.source"] == "synth":
        dataset = generate_synthetic(config.synth_config())
        return prepare_from_windows(dataset.train_windows, dataset.test_windows)
    schema = config.schema()
    if config["data.flows_csv"] is not None:
        parsed = parse_flow_csv(config["data.flows_csv"], schema)
        train_table, test_table = split_by_time(
            parsed.table, config["data.split_fraction"]
        )
    else:
        train_table = parse_flow_csv(config["data.train_csv"], schema).table
        test_table = parse_flow_csv(config["data.test_csv"], schema).table
    return prepare_from_tables(train_table, test_table, config["data.window_seconds"])


@dataclass
class TrainResult:
    container: DetectorContainer
    history_cls: list = field(default_factory=list)
    history_gate: list = field(default_factory=list)
    history_joint: list = field(default_factory=list)
    report: dict = field(default_factory=dict)


def container_meta(config: RunConfig, data: PreparedData, variant: str) -> dict:
    # synthetic data names its own columns; they can disagree with data.*
    if config["data.source"] == "synth":
        cols = [f"f{i}" for i in range(data.feature_dim)]
    else:
        cols = list(config["data.feature_cols"])
    return {
        "variant": variant,
        "feature_dim": str(data.feature_dim),
        "window_seconds": repr(config["data.window_seconds"]),
        "src_col": config["data.src_col"],
        "dst_col": config["data.dst_col"],
        "ts_col": config["data.ts_col"],
        "label_col": config["data.label_col"] or "",
        "feature_cols": ",".join(cols),
        "delimiter": config["data.delimiter"],
    }


def run_two_stage(
    config: RunConfig,
    data: PreparedData,
    out_dir=None,
    resume_from=None,
) -> TrainResult:
    """Stage one (experts, light augmentation), stage two (gate, heavy).

    ``resume_from`` skips stage one by loading a stage-1 checkpoint; the
    checkpoint must come from the same data configuration.  With an
    ``out_dir`` the run writes stage1.fmoe, model.fmoe, history.csv and
    report.txt there.
    """
    hidden = tuple(config["model.hidden"])
    history_cls: list = []
    stage1_seconds = 0.0
    if resume_from is not None:
        checkpoint = load_container(resume_from)
        bundle = checkpoint.bundle
        if len(bundle.stats.mean) != data.feature_dim or not np.allclose(
            bundle.stats.mean, data.stats.mean
        ):
            raise TrainingError(
                "checkpoint normalization does not match the prepared data; "
                "resume with the config that produced the checkpoint"
            )
    else:
        t0 = time.perf_counter()
        bundle, history_cls = train_experts(
            data.train_graphs,
            data.stats,
            config.stage1_params(),
            config.train_settings(config["train.epochs_stage1"], "experts"),
            hidden=hidden,
            class_weights=config["train.class_weights"],
        )
        stage1_seconds = time.perf_counter() - t0
        if out_dir is not None:
            save_container(
                _path(out_dir, "stage1.fmoe"),
                DetectorContainer(bundle, meta=container_meta(config, data, "stage1")),
            )

    t1 = time.perf_counter()
    gate, history_gate = train_gate(
        data.train_graphs,
        bundle,
        config.stage2_params(),
        config.train_settings(config["train.epochs_stage2"], "gate"),
        include_readout=config["model.include_readout"],
        hidden=hidden,
    )
    stage2_seconds = time.perf_counter() - t1

    container = DetectorContainer(
        bundle, gate=gate, meta=container_meta(config, data, "moe")
    )
    report = {
        "variant": "moe",
        "n_train_graphs": len(data.train_graphs),
        "n_train_flows": sum(g.edge_count for g in data.train_graphs),
        "epochs_stage1": config["train.epochs_stage1"],
        "epochs_stage2": config["train.epochs_stage2"],
        "stage1_seconds": stage1_seconds,
        "stage2_seconds": stage2_seconds,
        "final_cls_loss": history_cls[-1]["loss"] if history_cls else float("nan"),
        "final_gate_loss": history_gate[-1]["loss"] if history_gate else float("nan"),
        "final_masked_frac": history_gate[-1]["masked_frac"] if history_gate else 0.0,
        "kernel_backend": kernels.BACKEND,
    }
    result = TrainResult(container, history_cls, history_gate, [], report)
    if out_dir is not None:
        save_container(_path(out_dir, "model.fmoe"), container)
        write_history_csv(_path(out_dir, "history.csv"), result)
        with open(_path(out_dir, "report.txt"), "w") as fh:
            fh.write(render_report(report))
    return result


def run_one_stage(config: RunConfig, data: PreparedData) -> TrainResult:
    """Joint ablation: experts and gate step together on every graph.

    The combined objective is the classification loss plus the routing
    loss with equal weight; routing supervision is rebuilt from the
    current experts before every optimizer step, so the targets move as
    the experts learn.  Stage-one augmentation parameters apply, since
    the experts could not survive training under the heavy stage-two set.
    """
    usable = [g for g in data.train_graphs if not g.is_empty]
    if not usable:
        raise ValueError("no non-empty training graphs")
    settings = config.train_settings(config["train.epochs_stage1"], "experts")
    params = config.stage1_params()
    hidden = tuple(config["model.hidden"])
    include_readout = config["model.include_readout"]
    d = data.feature_dim
    stats = data.stats

    models = {
        kind: nn.mlp_init([embedding_dim(kind, d), *hidden, 2], derive_seed(settings.seed, kind))
        for kind in ("avg", "deg")
    }
    gate_mlp = nn.mlp_init(
        [gate_input_dim(d, include_readout), *hidden, 2], derive_seed(settings.seed, "gate")
    )
    opts = {kind: nn.Optimizer(settings) for kind in models}
    gate_opt = nn.Optimizer(settings)

    t0 = time.perf_counter()
    history = []
    for epoch in range(settings.epochs):
        cls_sum, gate_sum = 0.0, 0.0
        edges, masked = 0, 0
        for gi, g in enumerate(usable):
            rng = np.random.Generator(
                np.random.PCG64(derive_seed(settings.seed, "aug", epoch, gi))
            )
            ag = augment(g, params, rng)
            if ag.is_empty:
                continue
            cache = graph_readout(ag, stats) if include_readout else None
            n = ag.edge_count
            step = n if n < settings.full_batch_limit else settings.batch_size
            for i in range(0, n, step):
                rows = np.arange(i, min(i + step, n))
                y = ag.labels[rows]
                # routing targets from the experts as they stand right now
                embeds = {k: embed_edges(ag, k, stats, rows) for k in models}
                probs = {k: nn.mlp_forward(models[k], embeds[k]) for k in models}
                outputs = ExpertOutputs(
                    probs["avg"],
                    probs["deg"],
                    nn.cross_entropy(probs["avg"], y),
                    nn.cross_entropy(probs["deg"], y),
                )
                sup = gating_labels(outputs)
                for kind in models:
                    grads, loss = nn.mlp_backward(models[kind], embeds[kind], y)
                    opts[kind].step(models[kind], grads)
                    cls_sum += loss * len(rows)
                idx = rows[sup.mask]
                if idx.size:
                    x = gate_inputs(ag, stats, include_readout, idx, cache)
                    grads, loss = nn.mlp_backward(gate_mlp, x, sup.labels[sup.mask])
                    gate_opt.step(gate_mlp, grads)
                    gate_sum += loss * idx.size
                    masked += idx.size
                edges += len(rows)
        # cls loss matches the two-stage convention: per-edge sum of both
        # experts' losses, averaged over edges
        loss_cls = cls_sum / max(edges, 1)
        loss_gate = gate_sum / max(masked, 1)
        history.append(
            {
                "epoch": epoch,
                "loss_cls": loss_cls,
                "loss_gate": loss_gate,
                "loss": loss_cls + loss_gate,
                "masked_frac": masked / max(edges, 1),
            }
        )
    seconds = time.perf_counter() - t0

    bundle = ExpertBundle(models["avg"], models["deg"], stats)
    container = DetectorContainer(
        bundle,
        gate=GateModel(gate_mlp, include_readout),
        meta=container_meta(config, data, "one_stage"),
    )
    report = {
        "variant": "one_stage",
        "n_train_graphs": len(usable),
        "epochs": settings.epochs,
        "joint_seconds": seconds,
        "final_loss": history[-1]["loss"] if history else float("nan"),
        "final_masked_frac": history[-1]["masked_frac"] if history else 0.0,
        "kernel_backend": kernels.BACKEND,
    }
    return TrainResult(container, [], [], history, report)


def _path(out_dir, name: str):
    import os

    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(str(out_dir), name)


def write_history_csv(path, result: TrainResult) -> None:
    """Per-epoch losses for every stage that ran: stage,epoch,loss,masked_frac."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "epoch", "loss", "masked_frac"])
        for row in result.history_cls:
            writer.writerow(["experts", row["epoch"], repr(row["loss"]), ""])
        for row in result.history_gate:
            writer.writerow(
                ["gate", row["epoch"], repr(row["loss"]), repr(row["masked_frac"])]
            )
        for row in result.history_joint:
            writer.writerow(
                ["joint", row["epoch"], repr(row["loss"]), repr(row["masked_frac"])]
            )


def render_report(report: dict) -> str:
    width = max(len(k) for k in report)
    lines = ["training report", "=" * 15]
    for key, value in report.items():
        shown = f"{value:.6f}" if isinstance(value, float) else str(value)
        lines.append(f"{key.ljust(width)}  {shown}")
    return "\n".join(lines) + "\n"
