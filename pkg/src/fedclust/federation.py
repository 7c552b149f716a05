"""Round-based federation: FedClust plus FedAvg, FedProx and Local baselines.

All randomness is derived from ``config.seed`` and a per-purpose key, so the
initial model, every round's client sample and every local training run are
independent of each other and of the algorithm being simulated. That is what
makes FedClust with a huge threshold reproduce FedAvg bit-for-bit.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .clustering import (
    LINKAGES,
    ClusterAssignment,
    Dendrogram,
    agglomerative,
    assign_newcomer,
    pairwise_distance,
)
from .data import ClientShard
from .nn import (
    BYTES_PER_PARAM,
    ModelParams,
    PartialWeights,
    TrainSpec,
    accuracy,
    extract_partial_weights,
    final_layer_param_count,
    init_model,
    local_train,
    param_count,
    weighted_average,
)

ALGORITHMS = ("fedclust", "fedavg", "fedprox", "local")

# stream tags for derive_seed
_INIT, _SAMPLE, _TRAIN, _ROUND0, _NEWCOMER_FP, _NEWCOMER_FT = range(6)


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class FederationConfig:
    model_sizes: tuple[int, ...]
    num_clients: int
    rounds: int
    sampling_rate: float = 0.1
    lam: float = 1.0
    linkage: str = "average"
    algorithm: str = "fedclust"
    mu: float = 0.0
    train: TrainSpec = field(default_factory=TrainSpec)
    round0_train: TrainSpec | None = None
    personalization_epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model_sizes", tuple(int(s) for s in self.model_sizes))
        if len(self.model_sizes) < 2:
            raise ValueError("model_sizes needs an input and an output width")
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.sampling_rate <= 1.0:
            raise ValueError("sampling_rate must lie in (0, 1]")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.linkage not in LINKAGES:
            raise ValueError(f"linkage must be one of {LINKAGES}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.algorithm == "fedprox" and not self.mu > 0:
            raise ValueError("fedprox requires mu > 0")
        if self.personalization_epochs < 0:
            raise ValueError("personalization_epochs must be >= 0")

    @property
    def local_spec(self) -> TrainSpec:
        mu = self.mu if self.algorithm == "fedprox" else 0.0
        return replace(self.train, proximal_mu=mu)

    @property
    def round0_spec(self) -> TrainSpec:
        return replace(self.round0_train or self.train, proximal_mu=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model_sizes"] = list(self.model_sizes)
        d["lam"] = _json_float(self.lam)
        return d


def _json_float(x: float):
    return x if math.isfinite(x) else str(x)


@dataclass(frozen=True)
class ServerState:
    assignment: ClusterAssignment
    cluster_models: dict[int, ModelParams]
    representatives: dict[int, PartialWeights]
    round_index: int
    initial_model: ModelParams
    dendrogram: Dendrogram | None = None


@dataclass
class RoundLog:
    round_index: int
    sampled_clients: list[int]
    uplink_bytes: dict[int, int]
    downlink_bytes: dict[int, int]
    cluster_accuracy: dict[int, float]
    avg_accuracy: float

    @property
    def total_bytes(self) -> int:
        return sum(self.uplink_bytes.values()) + sum(self.downlink_bytes.values())

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "sampled_clients": list(self.sampled_clients),
            "uplink_bytes": {str(k): v for k, v in sorted(self.uplink_bytes.items())},
            "downlink_bytes": {str(k): v for k, v in sorted(self.downlink_bytes.items())},
            "cluster_accuracy": {str(k): v for k, v in sorted(self.cluster_accuracy.items())},
            "avg_accuracy": self.avg_accuracy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundLog":
        return cls(
            d["round"],
            [int(c) for c in d["sampled_clients"]],
            {int(k): int(v) for k, v in d["uplink_bytes"].items()},
            {int(k): int(v) for k, v in d["downlink_bytes"].items()},
            {int(k): float(v) for k, v in d["cluster_accuracy"].items()},
            float(d["avg_accuracy"]),
        )


@dataclass
class FederationHistory:
    config: dict
    assignment: list[int]
    rounds: list[RoundLog]
    final_accuracies: list[float]

    @property
    def num_clusters(self) -> int:
        return len(set(self.assignment))

    @property
    def final_accuracy(self) -> float:
        return float(np.mean(self.final_accuracies))

    @property
    def total_bytes(self) -> int:
        return sum(r.total_bytes for r in self.rounds)

    def summary(self) -> dict:
        return {
            "config": self.config,
            "assignment": list(self.assignment),
            "num_clusters": self.num_clusters,
            "num_rounds": len(self.rounds),
            "final_accuracies": list(self.final_accuracies),
            "final_avg_accuracy": self.final_accuracy,
            "total_bytes": self.total_bytes,
        }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.rounds)

    @classmethod
    def from_files(cls, summary: dict, jsonl: str) -> "FederationHistory":
        rounds = [RoundLog.from_dict(json.loads(line)) for line in jsonl.splitlines() if line.strip()]
        return cls(summary["config"], list(summary["assignment"]), rounds, list(summary["final_accuracies"]))


def init_server(config: FederationConfig) -> ModelParams:
    return init_model(config.model_sizes, derive_seed(config.seed, _INIT))


def sample_size(num_clients: int, rate: float) -> int:
    # round() first so 0.1 * 100 does not ceil to 11 through float noise
    return max(math.ceil(round(rate * num_clients, 9)), 1)


def sample_clients(num_clients: int, rate: float, round_index: int, seed: int) -> list[int]:
    """Uniform sample without replacement, sorted ascending."""
    if not 0.0 < rate <= 1.0:
        raise ValueError("sampling rate must lie in (0, 1]")
    n = min(sample_size(num_clients, rate), num_clients)
    rng = np.random.default_rng(derive_seed(seed, _SAMPLE, round_index))
    return sorted(int(c) for c in rng.choice(num_clients, size=n, replace=False))


def client_update(model: ModelParams, shard: ClientShard, config: FederationConfig, round_index: int) -> ModelParams:
    spec = config.local_spec.with_seed(derive_seed(config.seed, _TRAIN, round_index, shard.client_id))
    return local_train(model, shard, spec)


def round_zero_models(config: FederationConfig, shards: Sequence[ClientShard], initial: ModelParams | None = None) -> list[ModelParams]:
    """Every client's locally trained copy of the initial server model."""
    initial = initial if initial is not None else init_server(config)
    spec = config.round0_spec
    return [local_train(initial, s, spec.with_seed(derive_seed(config.seed, _ROUND0, s.client_id))) for s in shards]


def upload_fingerprints(config: FederationConfig, shards: Sequence[ClientShard], initial: ModelParams | None = None) -> list[PartialWeights]:
    """Round-0 client side: train the initial model locally, return final layers."""
    return [extract_partial_weights(m) for m in round_zero_models(config, shards, initial)]


def _evaluate(assignment: ClusterAssignment, models: dict[int, ModelParams], shards: Sequence[ClientShard]):
    per_client = [accuracy(models[assignment.labels[s.client_id]], s.test) for s in shards]
    per_cluster = {
        cid: float(np.mean([per_client[i] for i in assignment.members(cid)]))
        for cid in sorted(models)
    }
    return per_client, per_cluster, float(np.mean(per_client))


def _check_shards(config: FederationConfig, shards: Sequence[ClientShard]) -> None:
    if len(shards) != config.num_clients:
        raise ValueError(f"expected {config.num_clients} shards, got {len(shards)}")
    for i, s in enumerate(shards):
        if s.client_id != i:
            raise ValueError(f"shard {i} has client_id {s.client_id}; ids must be 0..N-1 in order")


def round_zero(
    config: FederationConfig,
    shards: Sequence[ClientShard],
    fingerprints: Sequence[PartialWeights] | None = None,
) -> tuple[ServerState, RoundLog]:
    """Clustering round. Passing precomputed ``fingerprints`` skips the local
    training (the bytes are still charged as if they were uploaded)."""
    _check_shards(config, shards)
    N = config.num_clients
    theta0 = init_server(config)
    full = param_count(theta0) * BYTES_PER_PARAM
    final = final_layer_param_count(theta0) * BYTES_PER_PARAM
    dendrogram = None
    up: dict[int, int] = {}
    down: dict[int, int] = {}
    sampled: list[int] = []

    if config.algorithm == "fedclust":
        if fingerprints is None:
            fingerprints = upload_fingerprints(config, shards, theta0)
        if N >= 2:
            assignment, dendrogram = agglomerative(pairwise_distance(fingerprints), config.linkage, config.lam)
        else:
            assignment = ClusterAssignment((0,))
        sampled = list(range(N))
        down = {k: full for k in sampled}
        up = {k: final for k in sampled}
    elif config.algorithm == "local":
        assignment = ClusterAssignment(tuple(range(N)))
    else:
        assignment = ClusterAssignment((0,) * N)

    models = {cid: theta0.copy() for cid in range(assignment.num_clusters)}
    reps = {cid: extract_partial_weights(m) for cid, m in models.items()}
    state = ServerState(assignment, models, reps, 0, theta0, dendrogram)
    _, per_cluster, avg = _evaluate(assignment, models, shards)
    return state, RoundLog(0, sampled, up, down, per_cluster, avg)


def federated_round(
    state: ServerState, shards: Sequence[ClientShard], config: FederationConfig, round_index: int
) -> tuple[ServerState, RoundLog]:
    if round_index < 1:
        raise ValueError("federated rounds start at 1")
    sampled = sample_clients(config.num_clients, config.sampling_rate, round_index, config.seed)
    labels = state.assignment.labels
    full = param_count(state.initial_model) * BYTES_PER_PARAM
    communicates = config.algorithm != "local"

    # clients could train concurrently; results are reduced in client-id order
    trained = {k: client_update(state.cluster_models[labels[k]], shards[k], config, round_index) for k in sampled}

    models = dict(state.cluster_models)
    for cid in sorted(models):
        ks = [k for k in sampled if labels[k] == cid]
        if ks:
            models[cid] = weighted_average([trained[k] for k in ks], [shards[k].num_train for k in ks])
    reps = {cid: extract_partial_weights(m) for cid, m in models.items()}

    up = {k: full for k in sampled} if communicates else {}
    down = dict(up)
    _, per_cluster, avg = _evaluate(state.assignment, models, shards)
    new_state = ServerState(state.assignment, models, reps, round_index, state.initial_model, state.dendrogram)
    return new_state, RoundLog(round_index, sampled, up, down, per_cluster, avg)


def run_rounds(
    config: FederationConfig,
    shards: Sequence[ClientShard],
    fingerprints: Sequence[PartialWeights] | None = None,
) -> Iterator[tuple[ServerState, RoundLog]]:
    """Yield the server state and log after each of the ``config.rounds`` rounds."""
    state, log = round_zero(config, shards, fingerprints)
    yield state, log
    for i in range(1, config.rounds):
        state, log = federated_round(state, shards, config, i)
        yield state, log


def run(
    config: FederationConfig,
    shards: Sequence[ClientShard],
    fingerprints: Sequence[PartialWeights] | None = None,
) -> FederationHistory:
    return run_with_state(config, shards, fingerprints)[1]


def run_with_state(
    config: FederationConfig,
    shards: Sequence[ClientShard],
    fingerprints: Sequence[PartialWeights] | None = None,
) -> tuple[ServerState, FederationHistory]:
    logs = []
    state = None
    for state, log in run_rounds(config, shards, fingerprints):
        logs.append(log)
    per_client, _, _ = _evaluate(state.assignment, state.cluster_models, shards)
    history = FederationHistory(config.to_dict(), list(state.assignment.labels), logs, per_client)
    return state, history


class NewcomerResult(NamedTuple):
    cluster_id: int
    model: ModelParams
    uplink_bytes: int
    downlink_bytes: int


def newcomer_flow(state: ServerState, new_shard: ClientShard, config: FederationConfig) -> NewcomerResult:
    """Place a late-joining client in the nearest cluster, then personalize.

    The newcomer trains the initial server model, uploads its final layer,
    is matched to the closest cluster representative, downloads that cluster
    model and fine-tunes it for ``config.personalization_epochs`` epochs.
    """
    theta0 = state.initial_model
    fp_spec = config.round0_spec.with_seed(derive_seed(config.seed, _NEWCOMER_FP, new_shard.client_id))
    fingerprint = extract_partial_weights(local_train(theta0, new_shard, fp_spec))
    cid = assign_newcomer(fingerprint, state.representatives)
    cluster_model = state.cluster_models[cid]
    if config.personalization_epochs == 0:
        personal = cluster_model.copy()
    else:
        ft_spec = replace(
            config.local_spec, epochs=config.personalization_epochs,
            seed=derive_seed(config.seed, _NEWCOMER_FT, new_shard.client_id),
        )
        personal = local_train(cluster_model, new_shard, ft_spec)
    return NewcomerResult(
        cid, personal,
        final_layer_param_count(theta0) * BYTES_PER_PARAM,
        param_count(theta0) * BYTES_PER_PARAM,
    )
