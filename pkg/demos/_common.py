"""Shared setup for the demo scripts: the planted two-group experiment."""
from pathlib import Path

from fedclust.config import load_experiment

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "planted.yaml"


def planted(seed=0):
    exp = load_experiment(CONFIG)
    shards, groups = exp.build_shards(seed)
    return exp, exp.federation_config(seed), shards, groups
