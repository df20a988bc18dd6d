"""Drift-robust malicious-flow detection on traffic graphs.

Flows become multigraph edges; two experts classify each flow from
complementary node features (neighborhood feature means vs. degrees) and
a gate picks the expert to trust per flow, trained under drift-style
augmentation so the choice tracks which statistics have shifted.
"""

__version__ = "0.1.0"

# note: the augment() function itself stays in flowmoe.augment so the
# submodule name is not shadowed by a same-named attribute
from .augment import AugmentParams, drop_edges, perturb_statistics
from .errors import ConfigError, FlowMoeError, FormatError, SchemaError, TrainingError
from .experts import (
    ExpertBundle,
    ExpertOutputs,
    expert_losses,
    expert_predict,
    expert_training_loss,
    train_experts,
)
from .gate import (
    GateModel,
    GateSupervision,
    gate_input,
    gate_inputs,
    gate_loss,
    gating_labels,
    moe_predict,
    moe_predict_weighted,
    train_gate,
    train_weighted_gate,
)
from .graph import (
    TrafficGraph,
    build_graph,
    compute_node_features,
    dump_graph,
    flow_embedding,
    readout,
    update_degree_stats,
)
from .ingest import (
    FlowRecord,
    FlowTable,
    NormStats,
    SchemaConfig,
    apply_normalization,
    fit_normalization,
    parse_flow_csv,
    window_flows,
    window_table,
)
from .config import RunConfig, benchmark_config, default_config, parse_config
from .container import DetectorContainer, load_container, save_container
from .evalbench import (
    DriftScenario,
    apply_scenario,
    default_scenarios,
    kernel_comparison,
    run_ablation_grid,
    throughput_bench,
)
from .metrics import MetricsReport, compute_metrics, oracle_select
from .nn import MlpModel, TrainConfig, gradient_check, load_model, mlp_forward, mlp_init, save_model
from .synth import SynthConfig, SynthDataset, generate_flood, generate_synthetic
from .training import (
    PreparedData,
    TrainResult,
    prepare_data,
    prepare_from_windows,
    run_one_stage,
    run_two_stage,
    split_by_time,
)
