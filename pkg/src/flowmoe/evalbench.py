"""Evaluation: drift scenarios, the ablation grid, and throughput numbers.

Drift is imposed at evaluation time by re-augmenting the clean test
graphs under fixed parameters, so every variant sees byte-identical
inputs per scenario:

  none      identity; reproduces the plain test evaluation bit-exactly
  drift1    feature perturbation only (bias + noise, no dropping)
  drift2    edge dropping only (keep fraction a ~ U(0, 1))
  drift12   both at once

The grid trains each requested variant once (expert bundles, gates and
the joint run are shared across variants that need them) and reports
pooled test metrics per scenario plus an unweighted overall row.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels, nn
from .augment import AugmentParams, augment
from .config import RunConfig
from .container import DetectorContainer
from .errors import ConfigError
from .experts import (
    ExpertBundle,
    derive_seed,
    expert_predict,
    predict_kind,
    train_experts,
    train_kind_expert,
)
from .gate import (
    GateModel,
    GateSupervision,
    gating_labels,
    moe_predict,
    moe_predict_weighted,
    train_gate,
    train_weighted_gate,
)
from .graph import TrafficGraph, build_graph, compute_node_features, update_degree_stats
from .ingest import FlowTable, NormStats, apply_normalization, fit_normalization
from .metrics import MetricsReport, compute_metrics
from .synth import generate_flood
from .training import PreparedData, run_one_stage

SCENARIO_ORDER = ("none", "drift1", "drift2", "drift12")

ALL_VARIANTS = (
    "avg",
    "deg",
    "avg_aug",
    "deg_aug",
    "avg_deg",
    "avg_deg_aug",
    "moe_no_aug",
    "moe",
    "wo_gi",
    "wo_hs",
    "one_stage",
    "oracle",
)


@dataclass(frozen=True)
class DriftScenario:
    """A named test-time augmentation setting (literal keep-bound gamma)."""

    name: str
    params: AugmentParams


def default_scenarios(alpha: float = 0.3, beta: float = 1.0) -> tuple:
    return (
        DriftScenario("none", AugmentParams()),
        DriftScenario("drift1", AugmentParams(alpha=alpha, beta=beta, gamma=1.0)),
        DriftScenario("drift2", AugmentParams(alpha=0.0, beta=0.0, gamma=0.0)),
        DriftScenario("drift12", AugmentParams(alpha=alpha, beta=beta, gamma=0.0)),
    )


def apply_scenario(
    graphs: list, scenario: DriftScenario, seed: int = 0
) -> list:
    """Drifted copies of the graphs; the identity scenario returns them as is."""
    if scenario.params.is_identity:
        return list(graphs)
    out = []
    for gi, g in enumerate(graphs):
        rng = np.random.Generator(
            np.random.PCG64(derive_seed(seed, "scenario", scenario.name, gi))
        )
        out.append(augment(g, scenario.params, rng))
    return out


@dataclass
class VariantModel:
    """One trained grid entry and how to run it."""

    name: str
    kind: str  # expert | moe | ws | oracle
    bundle: ExpertBundle | None = None
    model: nn.MlpModel | None = None
    embed_kind: str | None = None
    gate: GateModel | None = None
    head: nn.MlpModel | None = None


def _gate_supervision(bundle: ExpertBundle, graph: TrafficGraph, batch_size: int):
    return gating_labels(expert_predict(bundle, graph, batch_size))


def predict_variant(vm: VariantModel, graph: TrafficGraph, batch_size: int = 8192):
    """Run one variant over a labeled graph.

    Returns (predictions, chosen expert or None, supervision or None);
    the latter two exist only for routed variants.
    """
    if vm.kind == "expert":
        probs = predict_kind(vm.model, graph, vm.embed_kind, vm.bundle.stats, batch_size)
        return np.argmax(probs, axis=1), None, None
    if vm.kind == "moe":
        mp = moe_predict(vm.bundle, vm.gate, graph, batch_size)
        return mp.labels, mp.chosen, _gate_supervision(vm.bundle, graph, batch_size)
    if vm.kind == "ws":
        mp = moe_predict_weighted(vm.bundle, vm.gate, vm.head, graph, batch_size)
        return mp.labels, mp.chosen, _gate_supervision(vm.bundle, graph, batch_size)
    if vm.kind == "oracle":
        sup = _gate_supervision(vm.bundle, graph, batch_size)
        outputs = expert_predict(vm.bundle, graph, batch_size)
        preds = np.where(sup.labels == 0, outputs.pred_avg, outputs.pred_deg)
        return preds, sup.labels.copy(), sup
    raise ValueError(f"unknown variant kind {vm.kind!r}")


def train_variants(config: RunConfig, data: PreparedData, names) -> dict:
    """Train every requested variant, reusing shared bundles and gates."""
    unknown = [n for n in names if n not in ALL_VARIANTS]
    if unknown:
        raise ConfigError(f"unknown grid variants: {', '.join(unknown)}")
    names = set(names)
    stats = data.stats
    graphs = data.train_graphs
    hidden = tuple(config["model.hidden"])
    cw = config["train.class_weights"]
    s1 = config.train_settings(config["train.epochs_stage1"], "experts")
    s2 = config.train_settings(config["train.epochs_stage2"], "gate")
    identity = AugmentParams()
    aug1 = config.stage1_params()
    aug2 = config.stage2_params()

    out: dict = {}
    bundle_aug = bundle_plain = None
    if names & {"avg_aug", "deg_aug", "moe", "wo_gi", "wo_hs", "oracle"}:
        bundle_aug, _ = train_experts(graphs, stats, aug1, s1, hidden, cw)
    if names & {"avg", "deg", "moe_no_aug"}:
        bundle_plain, _ = train_experts(graphs, stats, identity, s1, hidden, cw)

    def expert_variant(name, bundle, model, kind):
        out[name] = VariantModel(name, "expert", bundle, model, kind)

    if "avg" in names:
        expert_variant("avg", bundle_plain, bundle_plain.avg, "avg")
    if "deg" in names:
        expert_variant("deg", bundle_plain, bundle_plain.deg, "deg")
    if "avg_aug" in names:
        expert_variant("avg_aug", bundle_aug, bundle_aug.avg, "avg")
    if "deg_aug" in names:
        expert_variant("deg_aug", bundle_aug, bundle_aug.deg, "deg")
    for name, params in (("avg_deg", identity), ("avg_deg_aug", aug1)):
        if name in names:
            cat, _ = train_kind_expert("cat", graphs, stats, params, s1, hidden, cw)
            # reuse the matching bundle's stats holder for embedding calls
            holder = ExpertBundle(cat, cat, stats)
            expert_variant(name, holder, cat, "cat")

    include_readout = config["model.include_readout"]
    if "moe" in names:
        gate, _ = train_gate(graphs, bundle_aug, aug2, s2, include_readout, hidden)
        out["moe"] = VariantModel("moe", "moe", bundle_aug, gate=gate)
    if "moe_no_aug" in names:
        gate, _ = train_gate(graphs, bundle_plain, identity, s2, include_readout, hidden)
        out["moe_no_aug"] = VariantModel("moe_no_aug", "moe", bundle_plain, gate=gate)
    if "wo_gi" in names:
        gate, _ = train_gate(graphs, bundle_aug, aug2, s2, False, hidden)
        out["wo_gi"] = VariantModel("wo_gi", "moe", bundle_aug, gate=gate)
    if "wo_hs" in names:
        ws_settings = config.train_settings(config["train.epochs_stage2"], "ws")
        gate, head, _ = train_weighted_gate(
            graphs,
            bundle_aug,
            aug2,
            ws_settings,
            include_readout,
            hidden,
            tuple(config["model.head_hidden"]),
        )
        out["wo_hs"] = VariantModel("wo_hs", "ws", bundle_aug, gate=gate, head=head)
    if "one_stage" in names:
        joint = run_one_stage(config, data).container
        out["one_stage"] = VariantModel(
            "one_stage", "moe", joint.bundle, gate=joint.gate
        )
    if "oracle" in names:
        out["oracle"] = VariantModel("oracle", "oracle", bundle_aug)
    return out


def evaluate_variant(
    vm: VariantModel, graphs: list, batch_size: int = 8192
) -> MetricsReport:
    """Pooled metrics over every edge of every non-empty graph."""
    preds, labels, chosen, sup_labels, sup_mask = [], [], [], [], []
    for g in graphs:
        if g.is_empty:
            continue
        p, c, sup = predict_variant(vm, g, batch_size)
        preds.append(p)
        labels.append(g.labels)
        if c is not None:
            chosen.append(c)
            sup_labels.append(sup.labels)
            sup_mask.append(sup.mask)
    if not preds:
        raise ValueError("every evaluation graph is empty")
    supervision = (
        GateSupervision(np.concatenate(sup_labels), np.concatenate(sup_mask))
        if sup_labels
        else None
    )
    return compute_metrics(
        np.concatenate(preds),
        np.concatenate(labels),
        np.concatenate(chosen) if chosen else None,
        supervision,
    )


def selection_fractions(
    vm: VariantModel, graphs: list, batch_size: int = 8192
) -> dict:
    """Fraction of disagreement edges the gate routes to each expert."""
    counts = np.zeros(2)
    for g in graphs:
        if g.is_empty:
            continue
        _, chosen, sup = predict_variant(vm, g, batch_size)
        if chosen is None:
            raise ValueError(f"variant {vm.name} has no routing to count")
        counts += np.bincount(chosen[sup.mask], minlength=2)
    total = counts.sum()
    if total == 0:
        return {"avg": None, "deg": None}
    return {"avg": counts[0] / total, "deg": counts[1] / total}


@dataclass
class GridResult:
    rows: list
    selection: list
    models: dict
    seconds: float


def _workers() -> int:
    raw = os.environ.get("FLOWMOE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_ablation_grid(
    config: RunConfig, data: PreparedData, variants=None
) -> GridResult:
    """Train and evaluate the variant grid over all drift scenarios.

    Rows come back in a fixed (variant, scenario) order with an overall
    row per variant: unweighted mean over scenarios.  Cells are pure
    once training is done, so with FLOWMOE_THREADS > 1 they are scored
    concurrently without changing any value.
    """
    t0 = time.perf_counter()
    if variants is None:
        variants = config["eval.variants"]
    names = list(ALL_VARIANTS) if list(variants) == ["all"] else list(variants)
    ordered = [v for v in ALL_VARIANTS if v in set(names)]
    unknown = [v for v in names if v not in ALL_VARIANTS]
    if unknown:
        raise ConfigError(f"unknown grid variants: {', '.join(unknown)}")

    scenarios = default_scenarios(config["eval.drift_alpha"], config["eval.drift_beta"])
    seed = config["eval.seed"]
    scenario_graphs = {
        sc.name: apply_scenario(data.test_graphs, sc, seed) for sc in scenarios
    }
    models = train_variants(config, data, ordered)
    batch = config["train.batch_size"]

    cells = [(v, sc.name) for v in ordered for sc in scenarios]
    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(
                pool.map(
                    lambda cell: evaluate_variant(
                        models[cell[0]], scenario_graphs[cell[1]], batch
                    ),
                    cells,
                )
            )
    else:
        reports = [
            evaluate_variant(models[v], scenario_graphs[s], batch) for v, s in cells
        ]
    by_cell = {cell: rep for cell, rep in zip(cells, reports)}

    rows = []
    for v in ordered:
        accs, f1s, gates, masked = [], [], [], 0
        for sc in scenarios:
            rep = by_cell[(v, sc.name)]
            rows.append(
                {
                    "variant": v,
                    "scenario": sc.name,
                    "acc": rep.acc,
                    "f1": rep.f1,
                    "acc_gate": rep.acc_gate,
                    "n_masked": rep.n_masked,
                }
            )
            accs.append(rep.acc)
            f1s.append(rep.f1)
            masked += rep.n_masked
            if rep.acc_gate is not None:
                gates.append(rep.acc_gate)
        rows.append(
            {
                "variant": v,
                "scenario": "overall",
                "acc": float(np.mean(accs)),
                "f1": float(np.mean(f1s)),
                "acc_gate": float(np.mean(gates)) if gates else None,
                "n_masked": masked,
            }
        )

    selection = []
    if "moe" in models:
        for sc in scenarios:
            frac = selection_fractions(models["moe"], scenario_graphs[sc.name], batch)
            for expert in ("avg", "deg"):
                selection.append(
                    {"scenario": sc.name, "expert": expert, "fraction": frac[expert]}
                )
    return GridResult(rows, selection, models, time.perf_counter() - t0)


def write_grid_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "scenario", "acc", "f1", "acc_gate", "n_masked"])
        for r in rows:
            writer.writerow(
                [
                    r["variant"],
                    r["scenario"],
                    repr(r["acc"]),
                    repr(r["f1"]),
                    "" if r["acc_gate"] is None else repr(r["acc_gate"]),
                    r["n_masked"],
                ]
            )


def write_selection_csv(path, selection) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "expert", "fraction"])
        for r in selection:
            writer.writerow(
                [
                    r["scenario"],
                    r["expert"],
                    "" if r["fraction"] is None else repr(r["fraction"]),
                ]
            )


def grid_lookup(rows, variant: str, scenario: str) -> dict:
    for r in rows:
        if r["variant"] == variant and r["scenario"] == scenario:
            return r
    raise KeyError(f"no grid row for ({variant}, {scenario})")


# -- throughput ------------------------------------------------------------


def _default_detector(feature_dim: int, stats: NormStats, hidden=(64, 64)):
    from .gate import gate_input_dim
    from .graph import embedding_dim

    bundle = ExpertBundle(
        nn.mlp_init([embedding_dim("avg", feature_dim), *hidden, 2], derive_seed(0, "avg")),
        nn.mlp_init([embedding_dim("deg", feature_dim), *hidden, 2], derive_seed(0, "deg")),
        stats,
    )
    gate = GateModel(
        nn.mlp_init([gate_input_dim(feature_dim, True), *hidden, 2], derive_seed(0, "gate"))
    )
    return bundle, gate


def _graph_bytes(graph: TrafficGraph) -> int:
    arrays = (
        graph.u,
        graph.v,
        graph.features,
        graph.labels,
        graph.flow_ids,
        graph.h_avg,
        graph.h_deg,
    )
    total = sum(a.nbytes for a in arrays if a is not None)
    total += sum(len(ip) + 50 for ip in graph.ips)  # str object overhead estimate
    return total


def throughput_bench(
    n_flows: int,
    feature_dim: int = 4,
    seed: int = 0,
    batch_size: int = 8192,
    container: DetectorContainer | None = None,
) -> dict:
    """Time the two pipeline stages on one large generated window.

    Construction covers normalization, graph building and node features;
    processing covers routed inference over every flow.  Memory is the
    resident graph working set divided by the flow count.
    """
    table = generate_flood(n_flows, feature_dim, seed)

    t0 = time.perf_counter()
    stats = fit_normalization(table.features)
    table = FlowTable(
        table.src,
        table.dst,
        table.timestamps,
        apply_normalization(table.features, stats),
        table.labels,
        table.flow_ids,
    )
    graph = compute_node_features(build_graph(table))
    stats = update_degree_stats(stats, [graph])
    construct_seconds = time.perf_counter() - t0

    if container is None:
        bundle, gate = _default_detector(feature_dim, stats)
    else:
        bundle, gate = container.bundle, container.gate

    t1 = time.perf_counter()
    prediction = moe_predict(bundle, gate, graph, batch_size)
    infer_seconds = time.perf_counter() - t1

    total = construct_seconds + infer_seconds
    return {
        "flows": n_flows,
        "nodes": graph.node_count,
        "backend": kernels.BACKEND,
        "construct_seconds": construct_seconds,
        "infer_seconds": infer_seconds,
        "total_seconds": total,
        "construct_flows_per_second": n_flows / construct_seconds,
        "infer_flows_per_second": n_flows / infer_seconds,
        "flows_per_second": n_flows / total,
        "bytes_per_flow": _graph_bytes(graph) / n_flows,
        "malicious_rate": float(np.mean(prediction.labels)),
    }


def scaling_probe(
    n_flows: int, feature_dim: int = 4, seed: int = 0, batch_size: int = 8192
) -> dict:
    """Total time at n/2 and n flows; near-linear pipelines stay under 2x."""
    half = throughput_bench(n_flows // 2, feature_dim, seed, batch_size)
    full = throughput_bench(n_flows, feature_dim, seed, batch_size)
    return {
        "half": half,
        "full": full,
        "time_ratio": full["total_seconds"] / half["total_seconds"],
    }


def kernel_comparison(n_flows: int = 200_000, feature_dim: int = 4, seed: int = 0) -> dict:
    """Time the hot kernels on identical inputs under every built backend."""
    table = generate_flood(n_flows, feature_dim, seed)
    results = {}
    for name, module in kernels.available_backends().items():
        t0 = time.perf_counter()
        u, v, ips = module.intern_pairs(table.src, table.dst)
        module.accumulate_node_features(u, v, table.features, len(ips))
        results[name] = time.perf_counter() - t0
    out = {"flows": n_flows, "seconds": results}
    if "python" in results and "compiled" in results:
        out["compiled_speedup"] = results["python"] / results["compiled"]
    return out


def render_bench_report(report: dict) -> str:
    lines = [
        "throughput report",
        "=" * 17,
        f"flows                {report['flows']}",
        f"distinct hosts       {report['nodes']}",
        f"kernel backend       {report['backend']}",
        "",
        "construction stage (normalize + graph + node features)",
        f"  seconds            {report['construct_seconds']:.3f}",
        f"  flows per second   {report['construct_flows_per_second']:.0f}",
        "",
        "processing stage (routed inference)",
        f"  seconds            {report['infer_seconds']:.3f}",
        f"  flows per second   {report['infer_flows_per_second']:.0f}",
        "",
        f"end to end           {report['flows_per_second']:.0f} flows/s",
        f"memory               {report['bytes_per_flow']:.0f} bytes/flow",
    ]
    return "\n".join(lines) + "\n"
