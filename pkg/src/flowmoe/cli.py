"""Command-line front end.

Subcommands: synth, train, eval, detect, bench.  Flags are limited to
--config, --seed and --out; detect additionally takes its model, input
and output paths positionally.  Any failure prints one line of the form
``error: <Kind>: <message>`` on stderr and exits nonzero.

FLOWMOE_THREADS caps how many worker threads evaluation fans out to
(default 1); results are identical at any setting.  FLOWMOE_KERNELS
forces the graph kernel backend (python or compiled).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import RunConfig, parse_config
from .container import load_container
from .errors import FlowMoeError
from .evalbench import (
    evaluate_variant,
    kernel_comparison,
    render_bench_report,
    run_ablation_grid,
    throughput_bench,
    write_grid_csv,
    write_selection_csv,
    VariantModel,
    default_scenarios,
    apply_scenario,
)
from .gate import moe_predict
from .graph import compute_node_features, build_graph
from .ingest import SchemaConfig, apply_normalization, parse_flow_csv, write_flow_csv
from .synth import generate_synthetic
from .training import prepare_data, render_report, run_two_stage

PROG = "flowmoe"


def _load_config(args) -> RunConfig:
    config = parse_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _outdir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _concat_windows(windows):
    from .ingest import FlowTable

    src, dst = [], []
    for w in windows:
        src.extend(w.src)
        dst.extend(w.dst)
    return FlowTable(
        src,
        dst,
        np.concatenate([w.timestamps for w in windows]),
        np.vstack([w.features for w in windows]),
        np.concatenate([w.labels for w in windows]),
    )


def cmd_synth(config: RunConfig, out_dir) -> int:
    """Generate the synthetic dataset and write both splits plus a manifest."""
    out = _outdir(out_dir)
    dataset = generate_synthetic(config.synth_config())
    schema = config.schema()
    d = config["synth.feature_dim"]
    schema = SchemaConfig(
        src_col=schema.src_col,
        dst_col=schema.dst_col,
        ts_col=schema.ts_col,
        feature_cols=[f"f{i}" for i in range(d)],
        label_col=schema.label_col or "label",
        delimiter=schema.delimiter,
    )
    write_flow_csv(os.path.join(out, "train.csv"), _concat_windows(dataset.train_windows), schema)
    write_flow_csv(os.path.join(out, "test.csv"), _concat_windows(dataset.test_windows), schema)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(dataset.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {dataset.manifest['n_train_flows']} train flows and "
          f"{dataset.manifest['n_test_flows']} test flows to {out}")
    return 0


def cmd_train(config: RunConfig, out_dir) -> int:
    """Prepare the configured data and run both training stages."""
    out = _outdir(out_dir)
    data = prepare_data(config)
    result = run_two_stage(config, data, out_dir=out)
    print(render_report(result.report), end="")
    print(f"model written to {os.path.join(out, 'model.fmoe')}")
    return 0


def cmd_eval(config: RunConfig, model_path, out_dir) -> int:
    """Score the ablation grid (and optionally one saved model) on test data."""
    out = _outdir(out_dir)
    data = prepare_data(config)
    grid = run_ablation_grid(config, data)
    write_grid_csv(os.path.join(out, "grid.csv"), grid.rows)
    write_selection_csv(os.path.join(out, "selection.csv"), grid.selection)
    for row in grid.rows:
        if row["scenario"] == "overall":
            gate = "" if row["acc_gate"] is None else f"  acc_gate={row['acc_gate']:.4f}"
            print(f"{row['variant']:<12} overall acc={row['acc']:.4f} f1={row['f1']:.4f}{gate}")

    if model_path is not None:
        container = load_container(model_path)
        if container.gate is None:
            raise FlowMoeError("model container has no gate; train stage 2 first")
        vm = VariantModel("model", "moe", container.bundle, gate=container.gate)
        scenarios = default_scenarios(
            config["eval.drift_alpha"], config["eval.drift_beta"]
        )
        with open(os.path.join(out, "model_eval.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scenario", "acc", "f1", "acc_gate", "n_masked"])
            for sc in scenarios:
                graphs = apply_scenario(data.test_graphs, sc, config["eval.seed"])
                rep = evaluate_variant(vm, graphs, config["train.batch_size"])
                writer.writerow(
                    [
                        sc.name,
                        repr(rep.acc),
                        repr(rep.f1),
                        "" if rep.acc_gate is None else repr(rep.acc_gate),
                        rep.n_masked,
                    ]
                )
    print(f"grid written to {os.path.join(out, 'grid.csv')}")
    return 0


def cmd_detect(model_path, flows_csv, out_csv, batch_size: int = 8192) -> int:
    """Classify a flow file with a saved detector.

    The whole file is treated as one traffic window.  Output rows keep
    the input order: flow_id, predicted_label, chosen_expert,
    gate_prob_avg, gate_prob_deg.
    """
    container = load_container(model_path)
    if container.gate is None:
        raise FlowMoeError("model container has no gate; train stage 2 first")
    meta = container.meta
    feature_cols = meta.get("feature_cols", "").split(",")
    if not feature_cols or feature_cols == [""]:
        raise FlowMoeError("model container carries no feature column names")

    delimiter = meta.get("delimiter", ",")
    with open(flows_csv, newline="") as fh:
        header = next(csv.reader(fh, delimiter=delimiter), None)
    if header is None:
        raise FlowMoeError(f"{flows_csv} is empty")
    label_col = meta.get("label_col") or None
    if label_col is not None and label_col not in header:
        label_col = None  # unlabeled input is fine for detection

    schema = SchemaConfig(
        src_col=meta.get("src_col", "src_ip"),
        dst_col=meta.get("dst_col", "dst_ip"),
        ts_col=meta.get("ts_col", "timestamp"),
        feature_cols=feature_cols,
        label_col=label_col,
        delimiter=delimiter,
    )
    table = parse_flow_csv(flows_csv, schema).table
    if len(table) == 0:
        raise FlowMoeError(f"{flows_csv} has no parseable flows")
    normalized = apply_normalization(table, container.bundle.stats)
    graph = compute_node_features(build_graph(normalized))
    prediction = moe_predict(container.bundle, container.gate, graph, batch_size)

    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["flow_id", "predicted_label", "chosen_expert", "gate_prob_avg", "gate_prob_deg"]
        )
        names = prediction.chosen_names()
        for i in range(len(table)):
            writer.writerow(
                [
                    int(graph.flow_ids[i]),
                    int(prediction.labels[i]),
                    names[i],
                    repr(float(prediction.gate_probs[i, 0])),
                    repr(float(prediction.gate_probs[i, 1])),
                ]
            )
    print(f"classified {len(table)} flows into {out_csv}")
    return 0


def cmd_bench(config: RunConfig, out_dir=None) -> int:
    """Measure construction/inference throughput and compare kernel backends."""
    report = throughput_bench(
        config["bench.flows"], config["bench.feature_dim"], config["bench.seed"]
    )
    text = render_bench_report(report)
    comparison = kernel_comparison(
        min(config["bench.flows"], 200_000),
        config["bench.feature_dim"],
        config["bench.seed"],
    )
    lines = ["", "kernel backends"]
    for name, seconds in sorted(comparison["seconds"].items()):
        lines.append(f"  {name:<10} {seconds:.3f}s on {comparison['flows']} flows")
    if "compiled_speedup" in comparison:
        lines.append(f"  compiled speedup {comparison['compiled_speedup']:.1f}x")
    text += "\n".join(lines) + "\n"
    print(text, end="")
    if out_dir is not None:
        out = _outdir(out_dir)
        with open(os.path.join(out, "bench.txt"), "w") as fh:
            fh.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Drift-robust encrypted-traffic detection on flow graphs.",
        epilog=(
            "Environment: FLOWMOE_THREADS caps evaluation worker threads; "
            "FLOWMOE_KERNELS forces the graph kernel backend."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True, needs_out=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, default=None, help="override every stage seed")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        return p

    add("synth", "generate the synthetic benchmark dataset")
    add("train", "run two-stage training on the configured data")
    p_eval = add("eval", "score the ablation grid over drift scenarios")
    p_eval.add_argument("model", nargs="?", default=None, help="optional saved model to score")
    p_detect = sub.add_parser("detect", help="classify a flow CSV with a saved model")
    p_detect.add_argument("model", help="model container file")
    p_detect.add_argument("flows", help="input flow CSV")
    p_detect.add_argument("output", help="prediction CSV to write")
    p_detect.add_argument("--seed", type=int, default=None, help="accepted for symmetry; detection is deterministic")
    p_bench = sub.add_parser("bench", help="throughput and backend benchmark")
    p_bench.add_argument("--config", required=True, help="run configuration file")
    p_bench.add_argument("--seed", type=int, default=None, help="override every stage seed")
    p_bench.add_argument("--out", default=None, help="optional output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(_load_config(args), args.out)
        if args.command == "train":
            return cmd_train(_load_config(args), args.out)
        if args.command == "eval":
            return cmd_eval(_load_config(args), args.model, args.out)
        if args.command == "detect":
            return cmd_detect(args.model, args.flows, args.output)
        if args.command == "bench":
            return cmd_bench(_load_config(args), args.out)
        raise FlowMoeError(f"unknown command {args.command!r}")
    except (FlowMoeError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
