"""One-shot clustered federated learning on desk-scale synthetic data.

Clients are grouped by the Euclidean distance between the final-layer
weights of their locally trained models, then each group runs its own
federated averaging. FedAvg, FedProx and purely local training are
available as degenerate configurations.
"""
from .clustering import (
    ClusterAssignment,
    Dendrogram,
    ProximityMatrix,
    agglomerative,
    assign_newcomer,
    block_structure_score,
    cut_dendrogram,
    pairwise_distance,
    per_layer_distance,
)
from .data import (
    ClientShard,
    LabeledDataset,
    PartitionSpec,
    partition_dirichlet,
    partition_label_skew,
    planted_cluster_partition,
    synth_gaussian_classes,
)
from .federation import (
    FederationConfig,
    FederationHistory,
    RoundLog,
    ServerState,
    federated_round,
    init_server,
    newcomer_flow,
    round_zero,
    run,
    sample_clients,
)
from .metrics import (
    CostReport,
    SweepResult,
    comm_cost_mb,
    export,
    lambda_sweep,
    rounds_to_target,
)
from .nn import (
    LayerParams,
    ModelParams,
    PartialWeights,
    TrainSpec,
    extract_partial_weights,
    final_layer_param_count,
    forward,
    init_model,
    local_train,
    loss_and_grad,
    param_count,
    weighted_average,
)

__version__ = "0.1.0"
