"""Megabytes needed to reach a target accuracy.

FedClust pays a small extra upload in round 0 (final layer only) and
then moves full models like FedAvg. The question is whether faster
convergence pays for it.
"""
from dataclasses import replace

from fedclust.federation import run
from fedclust.metrics import cost_report
from fedclust.nn import final_layer_param_count, init_model, param_count

from _common import planted

exp, cfg, shards, groups = planted(seed=0)
m = init_model(cfg.model_sizes, 0)
print(f"model: {param_count(m)} params, final layer {final_layer_param_count(m)}")

for target in (0.6, 0.8, 0.9):
    for name in ("fedclust", "fedavg"):
        rep = cost_report(run(replace(cfg, algorithm=name), shards), target)
        if rep.reached:
            print(f"target {target:.1f} {name:<8} round {rep.rounds_to_target:2d}, {rep.megabytes:.3f} Mb")
        else:
            print(f"target {target:.1f} {name:<8} not reached")
