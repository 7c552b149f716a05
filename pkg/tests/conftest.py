import numpy as np
import pytest

from fedclust.data import planted_cluster_partition, synth_gaussian_classes
from fedclust.nn import LayerParams, ModelParams, init_model


def random_model(rng, sizes, scale=1.0):
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        layers.append(LayerParams(scale * rng.standard_normal((fan_out, fan_in)),
                                  scale * rng.standard_normal(fan_out)))
    return ModelParams(layers)


def planted_setup(seed, clients_per_group=5, dim=16, per_class=100, sep=4.0):
    ds = synth_gaussian_classes(10, dim, per_class, sep, seed)
    return planted_cluster_partition(2, clients_per_group, [range(5), range(5, 10)], ds, seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    return init_model([4, 8, 3], seed=0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
