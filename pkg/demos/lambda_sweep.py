"""How the clustering threshold trades off sharing against specialization.

Tiny thresholds leave every client alone (local training); huge ones put
everybody in one cluster (FedAvg). The round-0 dendrogram tells us where
the interesting range is.
"""
from fedclust.clustering import agglomerative, pairwise_distance
from fedclust.federation import upload_fingerprints
from fedclust.metrics import lambda_grid, lambda_sweep

from _common import planted

exp, cfg, shards, groups = planted(seed=0)

fingerprints = upload_fingerprints(cfg, shards)
_, dendrogram = agglomerative(pairwise_distance(fingerprints), cfg.linkage)
print("last merge distances:", [round(float(d), 3) for d in dendrogram.distances[-4:]])

result = lambda_sweep(cfg, shards, lambda_grid(dendrogram, 8))
for lam, k, acc in result.entries:
    bar = "#" * int(40 * acc)
    print(f"lambda {lam:6.3f}  clusters {k:2d}  acc {acc:.3f} {bar}")
