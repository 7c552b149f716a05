"""Experiment files: schema, loading and conversion to runtime objects.

An experiment file is YAML (JSON also parses). Unknown keys are rejected
and every field is validated before any computation starts::

    seeds: [0, 1, 2]
    output_dir: runs
    dataset: {num_classes: 10, dim: 3, per_class: 100, sep: 4.0}
    partition: {scheme: planted, num_groups: 2, test_fraction: 0.2}
    model: {hidden: [32]}
    federation:
      algorithm: fedclust      # fedclust | fedavg | fedprox | local
      num_clients: 20
      rounds: 30
      sampling_rate: 0.5
      lambda: 0.8
      linkage: average         # single | average | complete
      mu: null                 # required (> 0) for fedprox
    train: {epochs: 10, batch_size: 10, learning_rate: 0.01, momentum: 0.5}
    round0_train: null         # defaults to train
    newcomer: {holdout_fraction: 0.2, personalization_epochs: 5}
    sweep: {lambdas: null, grid_points: 8}
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .data import (
    ClientShard,
    PartitionSpec,
    contiguous_label_groups,
    partition,
    planted_cluster_partition,
    synth_gaussian_classes,
)
from .federation import FederationConfig
from .nn import TrainSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class DatasetSection(_Strict):
    num_classes: int = Field(10, ge=2)
    dim: int = Field(3, ge=2)
    per_class: int = Field(100, ge=1)
    sep: float = Field(4.0, ge=0)


class PartitionSection(_Strict):
    scheme: Literal["planted", "label_skew", "dirichlet"] = "planted"
    num_groups: Optional[int] = Field(None, ge=2)
    delta: Optional[float] = Field(None, gt=0, le=1)
    alpha: Optional[float] = Field(None, gt=0)
    test_fraction: float = Field(0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _scheme_fields(self):
        if self.scheme == "planted" and self.num_groups is None:
            self.num_groups = 2
        if self.scheme == "label_skew" and self.delta is None:
            raise ValueError("partition.delta is required for label_skew")
        if self.scheme == "dirichlet" and self.alpha is None:
            raise ValueError("partition.alpha is required for dirichlet")
        return self


class ModelSection(_Strict):
    hidden: list[int] = Field(default_factory=lambda: [32])

    @field_validator("hidden")
    @classmethod
    def _positive(cls, v):
        if any(h < 1 for h in v):
            raise ValueError("hidden layer widths must be >= 1")
        return v


class FederationSection(_Strict):
    algorithm: Literal["fedclust", "fedavg", "fedprox", "local"] = "fedclust"
    num_clients: int = Field(20, ge=1)
    rounds: int = Field(30, ge=1)
    sampling_rate: float = Field(0.5, gt=0, le=1)
    lam: float = Field(0.8, gt=0, alias="lambda")
    linkage: Literal["single", "average", "complete"] = "average"
    mu: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def _fedprox_mu(self):
        if self.algorithm == "fedprox" and not (self.mu and self.mu > 0):
            raise ValueError("federation.mu > 0 is required when algorithm is fedprox")
        return self


class TrainSection(_Strict):
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(10, ge=1)
    learning_rate: float = Field(0.01, gt=0)
    momentum: float = Field(0.5, ge=0, lt=1)

    def spec(self) -> TrainSpec:
        return TrainSpec(self.epochs, self.batch_size, self.learning_rate, self.momentum)


class NewcomerSection(_Strict):
    holdout_fraction: float = Field(0.2, ge=0, lt=1)
    personalization_epochs: int = Field(5, ge=0)


class SweepSection(_Strict):
    lambdas: Optional[list[float]] = None
    grid_points: int = Field(8, ge=2)

    @field_validator("lambdas")
    @classmethod
    def _nonempty(cls, v):
        if v is not None and (not v or any(x <= 0 for x in v)):
            raise ValueError("sweep.lambdas must be a nonempty list of positive numbers")
        return v


class ExperimentFile(_Strict):
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    output_dir: str = "runs"
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    partition: PartitionSection = Field(default_factory=PartitionSection)
    model: ModelSection = Field(default_factory=ModelSection)
    federation: FederationSection = Field(default_factory=FederationSection)
    train: TrainSection = Field(default_factory=TrainSection)
    round0_train: Optional[TrainSection] = None
    newcomer: NewcomerSection = Field(default_factory=NewcomerSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if any(s < 0 or s >= 2**64 for s in v):
            raise ValueError("seeds must be unsigned 64-bit integers")
        return v

    @model_validator(mode="after")
    def _planted_fits(self):
        p, n = self.partition, self.federation.num_clients
        if p.scheme == "planted":
            if p.num_groups > self.dataset.num_classes:
                raise ValueError("partition.num_groups cannot exceed dataset.num_classes")
            if n % p.num_groups:
                raise ValueError(f"federation.num_clients {n} is not divisible by partition.num_groups {p.num_groups}")
        return self

    # ---- derived objects ---------------------------------------------

    def resolved(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)

    def run_id(self, seed: int) -> str:
        """Stable id from everything except ``seeds`` and ``output_dir``."""
        d = self.resolved()
        d.pop("seeds")
        d.pop("output_dir")
        digest = hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]
        return f"{self.federation.algorithm}-{digest}-seed{seed}"

    def model_sizes(self) -> tuple[int, ...]:
        return (self.dataset.dim, *self.model.hidden, self.dataset.num_classes)

    def federation_config(self, seed: int, num_clients: int | None = None) -> FederationConfig:
        f = self.federation
        return FederationConfig(
            model_sizes=self.model_sizes(),
            num_clients=num_clients if num_clients is not None else f.num_clients,
            rounds=f.rounds,
            sampling_rate=f.sampling_rate,
            lam=f.lam,
            linkage=f.linkage,
            algorithm=f.algorithm,
            mu=f.mu or 0.0,
            train=self.train.spec(),
            round0_train=self.round0_train.spec() if self.round0_train else None,
            personalization_epochs=self.newcomer.personalization_epochs,
            seed=seed,
        )

    def build_shards(self, seed: int) -> tuple[list[ClientShard], dict[int, int] | None]:
        """Dataset and client shards for one seed; ground-truth groups when planted."""
        d = self.dataset
        ds = synth_gaussian_classes(d.num_classes, d.dim, d.per_class, d.sep, seed)
        p, n = self.partition, self.federation.num_clients
        if p.scheme == "planted":
            labels = contiguous_label_groups(d.num_classes, p.num_groups)
            return planted_cluster_partition(p.num_groups, n // p.num_groups, labels, ds, seed, p.test_fraction)
        spec = PartitionSpec(p.scheme, n, p.test_fraction, seed, delta=p.delta, alpha=p.alpha)
        return partition(ds, spec), None


def load_experiment(path: str | Path) -> ExperimentFile:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise OSError(f"could not read config {path}: {exc}") from exc
    return ExperimentFile.model_validate(raw or {})
