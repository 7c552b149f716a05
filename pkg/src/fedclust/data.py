"""Synthetic classification data and non-IID client partitioners."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_PARTITION_RETRIES = 1000


class PartitionError(ValueError):
    """A partitioner could not give every client a usable shard."""


@dataclass
class LabeledDataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) int
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (n, d) and labels (n,)")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass
class ClientShard:
    client_id: int
    train: LabeledDataset
    test: LabeledDataset
    # Indices into the source dataset, kept so tests can check conservation.
    train_index: np.ndarray = field(repr=False, default=None)
    test_index: np.ndarray = field(repr=False, default=None)
    # Labels the partitioner handed this client before orphan repair (label skew only).
    owned_labels: frozenset[int] | None = None

    @property
    def label_set(self) -> frozenset[int]:
        return frozenset(np.unique(np.concatenate([self.train.labels, self.test.labels])).tolist())

    @property
    def num_train(self) -> int:
        return len(self.train)

    def histogram(self) -> np.ndarray:
        return self.train.histogram() + self.test.histogram()


@dataclass(frozen=True)
class PartitionSpec:
    """``scheme`` is ``"label_skew"`` (uses ``delta``) or ``"dirichlet"`` (uses ``alpha``)."""

    scheme: str
    num_clients: int
    test_fraction: float = 0.2
    seed: int = 0
    delta: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.scheme == "label_skew":
            if self.delta is None or not 0.0 < self.delta <= 1.0:
                raise ValueError("label_skew needs delta in (0, 1]")
        elif self.scheme == "dirichlet":
            if self.alpha is None or not self.alpha > 0:
                raise ValueError("dirichlet needs alpha > 0")
        else:
            raise ValueError(f"unknown partition scheme {self.scheme!r}")


def synth_gaussian_classes(
    num_classes: int, dim: int, per_class: int, sep: float, seed: int
) -> LabeledDataset:
    """Isotropic unit-variance Gaussian blobs, one per class.

    Class means are random unit directions scaled by ``sep``.
    """
    if num_classes < 2 or dim < 2:
        raise ValueError("need num_classes >= 2 and dim >= 2")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = sep * directions
    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + rng.standard_normal((labels.size, dim))
    return LabeledDataset(features, labels, num_classes)


def _split_train_test(
    ds: LabeledDataset, idx: np.ndarray, client_id: int, test_fraction: float,
    rng: np.random.Generator, owned: frozenset[int] | None = None,
) -> ClientShard:
    idx = np.sort(np.asarray(idx, dtype=np.int64))
    perm = rng.permutation(idx)
    n_test = min(max(int(round(test_fraction * idx.size)), 1), idx.size - 1)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    return ClientShard(
        client_id, ds.subset(train_idx), ds.subset(test_idx),
        train_index=train_idx, test_index=test_idx, owned_labels=owned,
    )


def _make_shards(ds, client_indices, spec_seed, test_fraction, owned=None) -> list[ClientShard]:
    shards = []
    for cid, idx in enumerate(client_indices):
        rng = np.random.default_rng([spec_seed, 7, cid])
        shards.append(_split_train_test(
            ds, idx, cid, test_fraction, rng, None if owned is None else owned[cid]
        ))
    return shards


def _labels_per_client(spec: PartitionSpec, num_classes: int) -> int:
    # rounding guards against 0.2 * 10 landing a hair above 2
    return math.ceil(round(spec.delta * num_classes, 9))


def partition_label_skew(ds: LabeledDataset, spec: PartitionSpec) -> list[ClientShard]:
    """Each client owns ``ceil(delta * C)`` labels; each label's samples are
    dealt out evenly among its owners. Labels nobody drew go to a random client.
    """
    if spec.scheme != "label_skew":
        raise ValueError("spec.scheme must be 'label_skew'")
    C, m = ds.num_classes, spec.num_clients
    L = _labels_per_client(spec, C)
    if not 1 <= L <= C:
        raise ValueError(f"ceil(delta * C) = {L} must lie in [1, {C}]")
    rng = np.random.default_rng(spec.seed)
    by_label = [np.flatnonzero(ds.labels == c) for c in range(C)]

    for _ in range(MAX_PARTITION_RETRIES):
        owned = [frozenset(rng.choice(C, size=L, replace=False).tolist()) for _ in range(m)]
        holders = [[k for k in range(m) if c in owned[k]] for c in range(C)]
        for c in range(C):
            if not holders[c] and by_label[c].size:
                holders[c] = [int(rng.integers(m))]
        parts: list[list[np.ndarray]] = [[] for _ in range(m)]
        for c in range(C):
            if not holders[c]:
                continue
            for k, chunk in zip(holders[c], np.array_split(rng.permutation(by_label[c]), len(holders[c]))):
                parts[k].append(chunk)
        client_idx = [np.concatenate(p) if p else np.empty(0, np.int64) for p in parts]
        if min(idx.size for idx in client_idx) >= 2:
            return _make_shards(ds, client_idx, spec.seed, spec.test_fraction, owned)
    raise PartitionError(
        f"label skew left a client with < 2 samples after {MAX_PARTITION_RETRIES} draws"
    )


def dirichlet_proportions(alpha: float, m: int, rng: np.random.Generator) -> np.ndarray:
    """Dir(alpha * 1_m) sample built from independent Gamma(alpha, 1) draws."""
    g = rng.gamma(alpha, 1.0, size=m)
    total = g.sum()
    if total <= 0:
        # every draw underflowed; the limit of Dir(alpha -> 0) is a random vertex
        g = np.zeros(m)
        g[rng.integers(m)] = 1.0
        total = 1.0
    return g / total


def partition_dirichlet(ds: LabeledDataset, spec: PartitionSpec) -> list[ClientShard]:
    """Route every label's samples to clients by Dirichlet proportions.

    A label's shuffled samples are cut at the cumulative-proportion
    boundaries, so client ``k`` receives ``floor``-rounded ``p_k * n_c`` of
    them. Redraws until every client holds at least 2 samples.
    """
    if spec.scheme != "dirichlet":
        raise ValueError("spec.scheme must be 'dirichlet'")
    C, m = ds.num_classes, spec.num_clients
    rng = np.random.default_rng(spec.seed)
    by_label = [np.flatnonzero(ds.labels == c) for c in range(C)]

    for _ in range(MAX_PARTITION_RETRIES):
        parts: list[list[np.ndarray]] = [[] for _ in range(m)]
        for c in range(C):
            p = dirichlet_proportions(spec.alpha, m, rng)
            shuffled = rng.permutation(by_label[c])
            cuts = (np.cumsum(p) * shuffled.size).astype(np.int64)[:-1]
            for k, chunk in enumerate(np.split(shuffled, cuts)):
                if chunk.size:
                    parts[k].append(chunk)
        client_idx = [np.concatenate(p) if p else np.empty(0, np.int64) for p in parts]
        if min(idx.size for idx in client_idx) >= 2:
            return _make_shards(ds, client_idx, spec.seed, spec.test_fraction)
    raise PartitionError(
        f"dirichlet routing left a client with < 2 samples after {MAX_PARTITION_RETRIES} draws"
    )


def partition(ds: LabeledDataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.scheme == "label_skew":
        return partition_label_skew(ds, spec)
    return partition_dirichlet(ds, spec)


def planted_cluster_partition(
    num_groups: int,
    clients_per_group: int,
    labels_per_group: Sequence[Sequence[int]],
    ds: LabeledDataset,
    seed: int,
    test_fraction: float = 0.2,
) -> tuple[list[ClientShard], dict[int, int]]:
    """Clients in group ``g`` only see samples of ``labels_per_group[g]``.

    Returns the shards (client ids group-major: group 0 first) and the
    ground-truth mapping client id -> group id.
    """
    if len(labels_per_group) != num_groups:
        raise ValueError("labels_per_group must have one entry per group")
    seen: set[int] = set()
    for labels in labels_per_group:
        s = set(int(c) for c in labels)
        if s & seen:
            raise ValueError(f"label sets overlap on {sorted(s & seen)}")
        if any(c < 0 or c >= ds.num_classes for c in s):
            raise ValueError(f"labels must lie in [0, {ds.num_classes})")
        seen |= s
    rng = np.random.default_rng([seed, 11])
    client_idx, groups = [], {}
    for g, labels in enumerate(labels_per_group):
        pool = np.flatnonzero(np.isin(ds.labels, list(labels)))
        for chunk in np.array_split(rng.permutation(pool), clients_per_group):
            groups[len(client_idx)] = g
            client_idx.append(chunk)
    if min(idx.size for idx in client_idx) < 2:
        raise PartitionError("a planted group has fewer than 2 samples per client")
    return _make_shards(ds, client_idx, seed, test_fraction), groups


def contiguous_label_groups(num_classes: int, num_groups: int) -> list[list[int]]:
    """Split ``range(num_classes)`` into ``num_groups`` contiguous blocks."""
    return [b.tolist() for b in np.array_split(np.arange(num_classes), num_groups)]


def label_entropy(hist: np.ndarray) -> float:
    p = hist[hist > 0] / hist.sum()
    return float(-(p * np.log(p)).sum())


def save_csv(ds: LabeledDataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(ds.dim)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path: str | Path, num_classes: int | None = None) -> LabeledDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label" or header[:-1] != [f"f{j}" for j in range(len(header) - 1)]:
            raise ValueError(f"{path}: header must be f0..f{{d-1}},label")
        rows = list(reader)
    features = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64)
    labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return LabeledDataset(features.reshape(len(rows), len(header) - 1), labels, num_classes)
