"""Which layer's weights reveal who trains on what?

Every client trains the same initial model on its own data for one pass.
We then compare clients layer by layer. Clients 0-9 only see labels 0-4
and clients 10-19 only see labels 5-9; a layer whose distance matrix has
small within-group and large between-group entries exposes that split.
"""
import numpy as np

from fedclust.clustering import block_structure_score, per_layer_distance
from fedclust.federation import round_zero_models

from _common import planted

exp, cfg, shards, groups = planted(seed=0)
models = round_zero_models(cfg, shards)

for layer in range(len(models[0].layers)):
    M = per_layer_distance(models, layer)
    D = M.entries
    score = block_structure_score(M, groups)
    print(f"layer {layer}: block structure score {score:.2f}")
    # coarse picture: mean distance between the two 10-client blocks
    blocks = np.array([[D[:10, :10].mean(), D[:10, 10:].mean()],
                       [D[10:, :10].mean(), D[10:, 10:].mean()]])
    print(np.array2string(blocks, precision=3))

# With this small MLP both layers already split the groups; the final layer
# scores highest.
