"""Federated averaging with individualized differential privacy.

Clients declare heterogeneous privacy budgets; a Renyi-DP accountant turns
them into per-client Poisson sampling rates under one global noise
multiplier, and the simulator trains a small classifier under that plan
alongside uniform-DP, noise-scaling, and non-private baselines.
"""

from .accountant import (
    DEFAULT_ORDERS,
    InfeasibleBudgetError,
    MechanismParams,
    PrivacyBudget,
    RdpCurve,
    composed_epsilon,
    epsilon_from_rdp,
    get_noise,
    get_sample_rate,
    rdp_subsampled_gaussian,
)
from .data import (
    ClientShard,
    FederatedDataset,
    LabeledData,
    assign_privacy_groups,
    largest_remainder,
    load_dataset,
    make_synthetic,
    partition_iid,
    partition_label_skew,
    save_dataset,
)
from .engine import (
    ClipState,
    EngineConfig,
    Mode,
    RoundMetrics,
    ScalePlan,
    adapt_clip_norm,
    aggregate_and_noise,
    clip_update,
    delta_noise_multiplier,
    non_private_plan,
    run_training,
    sample_clients,
    scale_baseline_plan,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_curve_plot,
    load_config,
    run_experiment,
)
from .model import (
    Layout,
    ModelConfig,
    ParamVector,
    evaluate,
    init_params,
    local_sgd,
    loss_and_grad,
)
from .planner import (
    PrivacyGroupSpec,
    SamplingPlan,
    get_group_sampling_rates,
    groups_from_client_budgets,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_ORDERS",
    "InfeasibleBudgetError",
    "MechanismParams",
    "PrivacyBudget",
    "RdpCurve",
    "composed_epsilon",
    "epsilon_from_rdp",
    "get_noise",
    "get_sample_rate",
    "rdp_subsampled_gaussian",
    "ClientShard",
    "FederatedDataset",
    "LabeledData",
    "assign_privacy_groups",
    "largest_remainder",
    "load_dataset",
    "make_synthetic",
    "partition_iid",
    "partition_label_skew",
    "save_dataset",
    "ClipState",
    "EngineConfig",
    "Mode",
    "RoundMetrics",
    "ScalePlan",
    "adapt_clip_norm",
    "aggregate_and_noise",
    "clip_update",
    "delta_noise_multiplier",
    "non_private_plan",
    "run_training",
    "sample_clients",
    "scale_baseline_plan",
    "ConfigError",
    "ExperimentConfig",
    "emit_curve_plot",
    "load_config",
    "run_experiment",
    "Layout",
    "ModelConfig",
    "ParamVector",
    "evaluate",
    "init_params",
    "local_sgd",
    "loss_and_grad",
    "PrivacyGroupSpec",
    "SamplingPlan",
    "get_group_sampling_rates",
    "groups_from_client_budgets",
]
