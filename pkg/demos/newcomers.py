"""Clients that show up after training has finished.

Four of the twenty clients sit out the federation. Each one later trains
the initial model locally, uploads its final layer, gets matched to the
closest cluster and fine-tunes that cluster's model.
"""
from dataclasses import replace

import numpy as np

from fedclust.federation import newcomer_flow, run_with_state
from fedclust.nn import accuracy

from _common import planted

exp, cfg, shards, groups = planted(seed=0)
held = [2, 7, 13, 18]
kept = [i for i in range(len(shards)) if i not in held]
fed = [replace(shards[i], client_id=j) for j, i in enumerate(kept)]
cfg = replace(cfg, num_clients=len(kept))

state, history = run_with_state(cfg, fed)
print(f"federation: {state.assignment.num_clusters} clusters, accuracy {history.final_accuracy:.3f}")

for j, i in enumerate(held):
    shard = replace(shards[i], client_id=len(kept) + j)
    res = newcomer_flow(state, shard, cfg)
    members = state.assignment.members(res.cluster_id)
    member_groups = np.bincount([groups[kept[k]] for k in members], minlength=2)
    before = accuracy(state.cluster_models[res.cluster_id], shard.test)
    after = accuracy(res.model, shard.test)
    print(f"client {i:2d} (group {groups[i]}) -> cluster {res.cluster_id}, "
          f"members by group {member_groups.tolist()}, acc {before:.3f} -> {after:.3f}, "
          f"{(res.uplink_bytes + res.downlink_bytes) / 1e3:.1f} kB")
