import csv
import json

import numpy as np
import pytest

from fedclust.clustering import agglomerative, pairwise_distance
from fedclust.federation import FederationConfig, FederationHistory, RoundLog, run, upload_fingerprints
from fedclust.metrics import (
    CostReport,
    SweepResult,
    comm_cost_mb,
    cost_report,
    export,
    lambda_grid,
    lambda_sweep,
    load_history,
    load_sweep,
    rounds_to_target,
)
from fedclust.nn import TrainSpec

from conftest import planted_setup


def fake_history(accs, bytes_per_round=0):
    logs = [RoundLog(i, [0], {0: bytes_per_round}, {}, {0: a}, a) for i, a in enumerate(accs)]
    return FederationHistory({}, [0], logs, [accs[-1]])


def test_rounds_to_target_zero():
    assert rounds_to_target(fake_history([0.1, 0.2]), 0.0) == 0


def test_rounds_to_target_crossing():
    accs = list(np.linspace(0.1, 0.95, 12))
    h = fake_history(accs)
    assert rounds_to_target(h, 0.8) == next(i for i, a in enumerate(accs) if a >= 0.8)
    h = fake_history([0.1 * i for i in range(10)])
    assert rounds_to_target(h, 0.65) == 7


def test_rounds_to_target_not_reached():
    assert rounds_to_target(fake_history([0.1, 0.5, 0.6]), 0.9) is None
    assert cost_report(fake_history([0.1]), 0.9) == CostReport(0.9, None, None)


def test_rounds_to_target_monotone_in_target():
    h = fake_history(list(np.random.default_rng(0).uniform(0, 1, 20)))
    targets = np.linspace(0.01, 0.99, 30)
    rs = [rounds_to_target(h, t) for t in targets]
    reached = [r for r in rs if r is not None]
    assert reached == sorted(reached)


def test_comm_cost_hand_computed():
    # 10 clients, 67-param model, full up + down in one round
    log = RoundLog(0, list(range(10)), {k: 67 * 4 for k in range(10)}, {k: 67 * 4 for k in range(10)}, {}, 0.0)
    h = FederationHistory({}, [0] * 10, [log], [0.0] * 10)
    assert h.total_bytes == 5360
    assert comm_cost_mb(h, 0) == pytest.approx(0.00536, abs=1e-15)
    with pytest.raises(ValueError):
        comm_cost_mb(h, 1)


def test_round_zero_uplink_is_final_layer_only():
    shards, _ = planted_setup(0, per_class=20)
    cfg = FederationConfig((16, 8, 3, 10), 10, 1, 1.0, lam=1.0, train=TrainSpec(epochs=1))
    h = run(cfg, shards)
    assert h.rounds[0].uplink_bytes[0] == (10 * 3 + 10) * 4


def test_local_costs_nothing():
    shards, _ = planted_setup(0, per_class=20)
    h = run(FederationConfig((16, 10), 10, 3, 0.5, algorithm="local", train=TrainSpec(epochs=1)), shards)
    assert comm_cost_mb(h, 0) == 0.0
    assert comm_cost_mb(h, 2) == 0.0


@pytest.fixture(scope="module")
def small_planted():
    return planted_setup(0, clients_per_group=4, per_class=30)


def test_sweep_spans_singletons_to_one_cluster(small_planted):
    shards, _ = small_planted
    cfg = FederationConfig((16, 8, 10), 8, 2, 1.0, train=TrainSpec(epochs=2, learning_rate=0.05))
    _, dn = agglomerative(pairwise_distance(upload_fingerprints(cfg, shards)), cfg.linkage)
    grid = lambda_grid(dn, 6)
    res = lambda_sweep(cfg, shards, grid[::-1])
    assert res.lambdas == sorted(grid)
    assert res.num_clusters[0] == 8 and res.num_clusters[-1] == 1
    assert all(a >= b for a, b in zip(res.num_clusters, res.num_clusters[1:]))


def test_single_lambda_sweep_equals_direct_run(small_planted):
    shards, _ = small_planted
    cfg = FederationConfig((16, 8, 10), 8, 2, 1.0, lam=0.3, train=TrainSpec(epochs=2, learning_rate=0.05))
    res = lambda_sweep(cfg, shards, [0.3])
    h = run(cfg, shards)
    assert res.entries == [(0.3, h.num_clusters, h.final_accuracy)]


def test_export_history_round_trip(tmp_path, small_planted):
    shards, _ = small_planted
    h = run(FederationConfig((16, 8, 10), 8, 3, 0.5, train=TrainSpec(epochs=1)), shards)
    files = export(h, tmp_path / "h")
    assert [f.name for f in files] == ["summary.json", "history.jsonl", "rounds.csv"]
    back = load_history(tmp_path / "h")
    assert back.rounds == h.rounds
    assert back.final_accuracies == h.final_accuracies
    assert back.assignment == h.assignment
    rows = list(csv.reader((tmp_path / "h" / "rounds.csv").open()))
    assert rows[0] == ["round", "num_sampled", "uplink_bytes", "downlink_bytes", "cumulative_bytes", "avg_accuracy"]
    assert len(rows) - 1 == 3
    assert int(rows[-1][4]) == h.total_bytes


def test_export_sweep_schema(tmp_path):
    res = SweepResult([(0.1, 8, 0.5), (1.0, 2, 0.9)], {"x": 1})
    export(res, tmp_path)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "lambda,num_clusters,final_accuracy"
    assert len(lines) == 3
    assert load_sweep(tmp_path).entries == res.entries


def test_export_cost(tmp_path):
    export(CostReport(0.8, 7, 1.25), tmp_path)
    d = json.loads((tmp_path / "cost.json").read_text())
    assert d["rounds_to_target"] == 7 and d["megabytes"] == 1.25


def test_export_errors(tmp_path):
    (tmp_path / "file").write_text("x")
    with pytest.raises(OSError, match="file"):
        export(SweepResult([], {}), tmp_path / "file" / "sub")
    with pytest.raises(TypeError):
        export(42, tmp_path)


def test_cost_recomputable_from_first_principles(small_planted):
    shards, _ = small_planted
    from fedclust.federation import sample_clients
    from fedclust.nn import param_count, final_layer_param_count, init_model
    cfg = FederationConfig((16, 8, 10), 8, 6, 0.25, train=TrainSpec(epochs=1))
    h = run(cfg, shards)
    m = init_model(cfg.model_sizes, 0)
    total = 8 * (param_count(m) + final_layer_param_count(m)) * 4
    total += sum(2 * param_count(m) * 4 * len(sample_clients(8, 0.25, r, 0)) for r in range(1, 6))
    assert comm_cost_mb(h, 5) == total / 1e6
    report = cost_report(h, 0.0)
    assert report.rounds_to_target == 0 and report.megabytes == comm_cost_mb(h, 0)
