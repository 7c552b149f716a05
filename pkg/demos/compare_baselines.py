"""FedClust against FedAvg, FedProx and purely local training on the
planted two-group federation."""
from dataclasses import replace

from fedclust.federation import run

from _common import planted

exp, cfg, shards, groups = planted(seed=0)

variants = {
    "fedclust": cfg,
    "fedavg": replace(cfg, algorithm="fedavg"),
    "fedprox": replace(cfg, algorithm="fedprox", mu=0.01),
    "local": replace(cfg, algorithm="local"),
}

print(f"{'algorithm':<10} {'clusters':>8} {'final acc':>10} {'Mb sent':>9}")
for name, c in variants.items():
    h = run(c, shards)
    print(f"{name:<10} {h.num_clusters:>8} {h.final_accuracy:>10.3f} {h.total_bytes / 1e6:>9.3f}")

# A single global model has to cover ten labels with a small network, while each
# cluster model only needs five. Local training sees the right labels but only
# a few dozen samples per client.
