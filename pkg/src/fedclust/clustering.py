"""Client similarity from final-layer weights and agglomerative clustering."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np

from .nn import ModelParams, PartialWeights, layer_flat

LinkageKind = Literal["single", "average", "complete"]
LINKAGES = ("single", "average", "complete")


@dataclass(frozen=True)
class ProximityMatrix:
    entries: np.ndarray  # (m, m)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError("proximity matrix must be square")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("proximity entries must be finite and non-negative")
        if not np.array_equal(e, e.T) or np.any(np.diag(e) != 0):
            raise ValueError("proximity matrix must be symmetric with a zero diagonal")
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def to_dict(self) -> dict:
        return {"size": self.size, "entries": self.entries.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ProximityMatrix":
        return cls(np.array(d["entries"], dtype=np.float64))


@dataclass(frozen=True)
class Merge:
    cluster_a: int
    cluster_b: int
    distance: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merge history using scipy's numbering: leaves are ``0..m-1`` and the
    cluster created by merge ``i`` gets id ``m + i``."""

    num_leaves: int
    merges: tuple[Merge, ...]

    @property
    def distances(self) -> np.ndarray:
        return np.array([mg.distance for mg in self.merges])

    def to_dict(self) -> dict:
        return {
            "num_leaves": self.num_leaves,
            "merges": [[mg.cluster_a, mg.cluster_b, mg.distance, mg.size] for mg in self.merges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dendrogram":
        return cls(d["num_leaves"], tuple(Merge(int(a), int(b), float(t), int(s)) for a, b, t, s in d["merges"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class ClusterAssignment:
    labels: tuple[int, ...]  # labels[client_id] = cluster id

    @property
    def num_clusters(self) -> int:
        return len(set(self.labels))

    def members(self, cluster_id: int) -> list[int]:
        return [i for i, c in enumerate(self.labels) if c == cluster_id]

    def clusters(self) -> list[list[int]]:
        return [self.members(c) for c in range(self.num_clusters)]

    def as_partition(self) -> frozenset[frozenset[int]]:
        return frozenset(frozenset(ms) for ms in self.clusters())

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]], m: int) -> "ClusterAssignment":
        """Relabel groups so cluster ids follow each group's smallest member."""
        labels = [-1] * m
        for cid, grp in enumerate(sorted((sorted(g) for g in groups if g), key=lambda g: g[0])):
            for i in grp:
                labels[i] = cid
        if -1 in labels:
            raise ValueError("every client must belong to a group")
        return cls(tuple(labels))


def pairwise_distance(fingerprints: Sequence[PartialWeights | np.ndarray]) -> ProximityMatrix:
    """Euclidean distance between every pair of fingerprints."""
    vecs = [np.asarray(f.values if isinstance(f, PartialWeights) else f, dtype=np.float64) for f in fingerprints]
    m = len(vecs)
    if m < 2:
        raise ValueError("need at least two fingerprints")
    length = vecs[0].shape
    for v in vecs:
        if v.shape != length:
            raise ValueError(f"fingerprint shapes differ: {v.shape} vs {length}")
    out = np.zeros((m, m))
    for p in range(m):
        for q in range(p + 1, m):
            out[p, q] = out[q, p] = np.linalg.norm(vecs[p] - vecs[q])
    return ProximityMatrix(out)


def agglomerative(
    M: ProximityMatrix, linkage: LinkageKind = "average", lam: float = math.inf
) -> tuple[ClusterAssignment, Dendrogram]:
    """Bottom-up merging of the closest pair of clusters.

    The flat clustering keeps every merge at distance ``<= lam``; the full
    dendrogram is returned regardless. Equal-distance candidates are resolved
    by the smallest (min member, max member) key of the pair.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    m = M.size
    D = M.entries.copy()
    np.fill_diagonal(D, np.inf)
    active = list(range(m))  # matrix rows still in play
    node_id = list(range(m))  # dendrogram id of each row
    size = [1] * m
    rep = list(range(m))  # smallest client id in each row's cluster
    members: list[list[int]] = [[i] for i in range(m)]
    merges: list[Merge] = []
    cut: list[list[int]] | None = None

    while len(active) > 1:
        sub = D[np.ix_(active, active)]
        best = sub.min()
        if cut is None and best > lam:
            cut = [list(members[r]) for r in active]
        ii, jj = np.nonzero(np.triu(sub == best, k=1))
        candidates = [(min(rep[active[i]], rep[active[j]]), max(rep[active[i]], rep[active[j]]), active[i], active[j])
                      for i, j in zip(ii, jj)]
        _, _, a, b = min(candidates)
        na, nb = size[a], size[b]
        merges.append(Merge(node_id[a], node_id[b], float(best), na + nb))

        for k in active:
            if k in (a, b):
                continue
            if linkage == "single":
                d = min(D[a, k], D[b, k])
            elif linkage == "complete":
                d = max(D[a, k], D[b, k])
            else:
                d = (na * D[a, k] + nb * D[b, k]) / (na + nb)
            D[a, k] = D[k, a] = d
        active.remove(b)
        D[b, :] = D[:, b] = np.inf
        size[a] = na + nb
        rep[a] = min(rep[a], rep[b])
        members[a] = members[a] + members[b]
        node_id[a] = m + len(merges) - 1

    if cut is None:
        cut = [list(members[r]) for r in active]
    return ClusterAssignment.from_groups(cut, m), Dendrogram(m, tuple(merges))


def cut_dendrogram(dendrogram: Dendrogram, lam: float) -> ClusterAssignment:
    """Flat clustering from a dendrogram, applying merges up to the first one
    whose distance exceeds ``lam``."""
    m = dendrogram.num_leaves
    groups: dict[int, list[int]] = {i: [i] for i in range(m)}
    for i, mg in enumerate(dendrogram.merges):
        if mg.distance > lam:
            break
        groups[m + i] = groups.pop(mg.cluster_a) + groups.pop(mg.cluster_b)
    return ClusterAssignment.from_groups(list(groups.values()), m)


def per_layer_distance(models: Sequence[ModelParams], layer_index: int) -> ProximityMatrix:
    """Distance matrix over the flattened (weights, bias) of one layer."""
    if len(models) < 2:
        raise ValueError("need at least two models")
    for mdl in models[1:]:
        if not mdl.congruent(models[0]):
            raise ValueError("models are not shape-congruent")
    return pairwise_distance([layer_flat(mdl, layer_index) for mdl in models])


def block_structure_score(M: ProximityMatrix, groups: Mapping[int, int] | Sequence[int]) -> float:
    """Mean between-group distance over mean within-group distance.

    Returns ``math.inf`` when all within-group distances are zero.
    """
    labels = [groups[i] for i in range(M.size)]
    if len(set(labels)) < 2:
        raise ValueError("need at least two groups")
    within, between = [], []
    for p in range(M.size):
        for q in range(p + 1, M.size):
            (within if labels[p] == labels[q] else between).append(M.entries[p, q])
    if not within:
        raise ValueError("no group has two members, so there are no within-group pairs")
    w = float(np.mean(within))
    b = float(np.mean(between))
    return math.inf if w == 0 else b / w


def assign_newcomer(fingerprint: PartialWeights | np.ndarray, representatives: Mapping[int, PartialWeights | np.ndarray]) -> int:
    """Cluster whose representative is nearest; ties go to the smallest id."""
    if not representatives:
        raise ValueError("no clusters to assign to")
    x = np.asarray(fingerprint.values if isinstance(fingerprint, PartialWeights) else fingerprint)
    best_id, best_d = None, math.inf
    for cid in sorted(representatives):
        r = representatives[cid]
        r = np.asarray(r.values if isinstance(r, PartialWeights) else r)
        if r.shape != x.shape:
            raise ValueError(f"representative {cid} has shape {r.shape}, fingerprint {x.shape}")
        d = float(np.linalg.norm(x - r))
        if d < best_d:
            best_id, best_d = cid, d
    return best_id
