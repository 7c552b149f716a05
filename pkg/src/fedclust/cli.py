"""Command-line entry point.

    fedclust run --config exp.yaml [--seed S] [--out DIR] [--lambda L] [--rounds T]
    fedclust sweep --config exp.yaml [--lambda L ...] [--auto-grid]
    fedclust newcomer --config exp.yaml
    fedclust observe-layers --config exp.yaml

Each (config, seed) pair writes into ``<out>/<algorithm>-<hash>-seed<S>/``;
the hash covers the resolved config minus seeds and output dir, so reruns
overwrite with identical bytes instead of piling up.

Exit codes: 0 success, 2 invalid config or arguments, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from .clustering import agglomerative, block_structure_score, pairwise_distance, per_layer_distance
from .config import ExperimentFile, load_experiment
from .federation import newcomer_flow, round_zero_models, run, run_with_state, upload_fingerprints
from .metrics import csv_text, write_text, dump_json, export_history, export_sweep, lambda_grid, lambda_sweep
from .nn import accuracy

log = logging.getLogger("fedclust")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    pass


def _apply_overrides(exp: ExperimentFile, args) -> ExperimentFile:
    d = exp.resolved()
    if getattr(args, "seed", None) is not None:
        d["seeds"] = [args.seed]
    if getattr(args, "out", None) is not None:
        d["output_dir"] = str(args.out)
    if getattr(args, "rounds", None) is not None:
        d["federation"]["rounds"] = args.rounds
    lam = getattr(args, "lam", None)
    if lam:
        if args.command == "sweep":
            d["sweep"]["lambdas"] = list(lam)
        elif len(lam) == 1:
            d["federation"]["lambda"] = lam[0]
        else:
            raise ConfigError("--lambda takes a single value outside of sweep")
    return ExperimentFile.model_validate(d)


def _run_dir(exp: ExperimentFile, seed: int) -> Path:
    return Path(exp.output_dir) / exp.run_id(seed)


def _echo_config(exp: ExperimentFile, seed: int, directory: Path) -> None:
    d = exp.resolved()
    d["seeds"] = [seed]
    write_text(directory / "config.yaml", yaml.safe_dump(d, sort_keys=True))


def cmd_run(exp: ExperimentFile) -> list[Path]:
    dirs = []
    for seed in exp.seeds:
        shards, _ = exp.build_shards(seed)
        history = run(exp.federation_config(seed), shards)
        out = _run_dir(exp, seed)
        export_history(history, out)
        _echo_config(exp, seed, out)
        log.info("seed %d: %d clusters, final accuracy %.4f -> %s",
                 seed, history.num_clusters, history.final_accuracy, out)
        dirs.append(out)
    return dirs


def cmd_sweep(exp: ExperimentFile, auto_grid: bool = False) -> list[Path]:
    dirs = []
    for seed in exp.seeds:
        shards, _ = exp.build_shards(seed)
        cfg = exp.federation_config(seed)
        out = _run_dir(exp, seed)
        fingerprints = upload_fingerprints(cfg, shards)
        _, dendrogram = agglomerative(pairwise_distance(fingerprints), cfg.linkage)
        write_text(out / "dendrogram.json", dump_json(dendrogram.to_dict()))
        if auto_grid or exp.sweep.lambdas is None:
            lambdas = lambda_grid(dendrogram, exp.sweep.grid_points)
        else:
            lambdas = exp.sweep.lambdas
        result = lambda_sweep(cfg, shards, lambdas)
        export_sweep(result, out)
        _echo_config(exp, seed, out)
        log.info("seed %d: sweep over %d thresholds -> %s", seed, len(lambdas), out)
        dirs.append(out)
    return dirs


def _holdout(n: int, fraction: float, seed: int) -> list[int]:
    k = int(round(fraction * n))
    if k < 1:
        raise ConfigError("newcomer.holdout_fraction leaves no newcomer to evaluate")
    if k >= n:
        raise ConfigError("newcomer.holdout_fraction leaves no client for the federation")
    rng = np.random.default_rng([seed, 23])
    return sorted(int(i) for i in rng.choice(n, size=k, replace=False))


def cmd_newcomer(exp: ExperimentFile) -> list[Path]:
    dirs = []
    for seed in exp.seeds:
        shards, groups = exp.build_shards(seed)
        held = _holdout(len(shards), exp.newcomer.holdout_fraction, seed)
        kept = [i for i in range(len(shards)) if i not in held]
        fed_shards = [replace(shards[i], client_id=j) for j, i in enumerate(kept)]
        cfg = exp.federation_config(seed, num_clients=len(kept))
        state, history = run_with_state(cfg, fed_shards)

        rows = []
        for j, i in enumerate(held):
            shard = replace(shards[i], client_id=len(kept) + j)
            res = newcomer_flow(state, shard, cfg)
            row = {
                "client": i,
                "cluster": res.cluster_id,
                "cluster_accuracy": accuracy(state.cluster_models[res.cluster_id], shard.test),
                "personalized_accuracy": accuracy(res.model, shard.test),
                "uplink_bytes": res.uplink_bytes,
                "downlink_bytes": res.downlink_bytes,
            }
            if groups is not None:
                members = [groups[kept[k]] for k in state.assignment.members(res.cluster_id)]
                row["group"] = groups[i]
                row["correct"] = bool(np.bincount(members).argmax() == groups[i])
            rows.append(row)

        report = {
            "num_newcomers": len(rows),
            "avg_cluster_accuracy": float(np.mean([r["cluster_accuracy"] for r in rows])),
            "avg_personalized_accuracy": float(np.mean([r["personalized_accuracy"] for r in rows])),
            "newcomers": rows,
        }
        if groups is not None:
            report["assignment_accuracy"] = float(np.mean([r["correct"] for r in rows]))
        out = _run_dir(exp, seed)
        export_history(history, out / "federation")
        write_text(out / "newcomer.json", dump_json(report))
        cols = list(rows[0])
        write_text(out / "newcomers.csv", csv_text(cols, [[r[c] for c in cols] for r in rows]))
        _echo_config(exp, seed, out)
        log.info("seed %d: %d newcomers, personalized accuracy %.4f -> %s",
                 seed, len(rows), report["avg_personalized_accuracy"], out)
        dirs.append(out)
    return dirs


def cmd_observe_layers(exp: ExperimentFile) -> list[Path]:
    if exp.partition.scheme != "planted":
        raise ConfigError("observe-layers needs partition.scheme = planted")
    dirs = []
    for seed in exp.seeds:
        shards, groups = exp.build_shards(seed)
        cfg = exp.federation_config(seed)
        models = round_zero_models(cfg, shards)
        out = _run_dir(exp, seed)
        rows = []
        for layer in range(len(models[0].layers)):
            M = per_layer_distance(models, layer)
            score = block_structure_score(M, groups)
            write_text(out / "layers" / f"layer_{layer}.json", dump_json({"layer": layer, **M.to_dict()}))
            rows.append([layer, repr(score)])
        write_text(out / "layers" / "scores.csv", csv_text(["layer", "block_structure_score"], rows))
        _echo_config(exp, seed, out)
        log.info("seed %d: layer scores %s -> %s", seed, [r[1] for r in rows], out)
        dirs.append(out)
    return dirs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedclust", description="Clustered federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, type=Path, help="experiment YAML/JSON file")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--rounds", type=int, help="number of rounds, including round 0")
        p.add_argument("--lambda", dest="lam", type=float, nargs="+", help="clustering threshold(s)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("run", help="run a federation per seed"))
    sweep = common(sub.add_parser("sweep", help="sweep the clustering threshold"))
    sweep.add_argument("--auto-grid", action="store_true",
                       help="span the grid from the round-0 dendrogram's merge distances")
    common(sub.add_parser("newcomer", help="evaluate late-joining clients"))
    common(sub.add_parser("observe-layers", help="per-layer distance matrices after round 0"))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    try:
        exp = _apply_overrides(load_experiment(args.config), args)
        if args.command == "newcomer":
            _holdout(exp.federation.num_clients, exp.newcomer.holdout_fraction, 0)
        if args.command == "observe-layers" and exp.partition.scheme != "planted":
            raise ConfigError("observe-layers needs partition.scheme = planted")
    except ValidationError as exc:
        print(f"invalid config {args.config}:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, yaml.YAMLError, OSError) as exc:
        print(f"invalid config {args.config}: {exc}", file=sys.stderr)
        return EXIT_INVALID

    commands = {
        "run": cmd_run,
        "sweep": lambda e: cmd_sweep(e, args.auto_grid),
        "newcomer": cmd_newcomer,
        "observe-layers": cmd_observe_layers,
    }
    try:
        dirs = commands[args.command](exp)
    except Exception as exc:  # noqa: BLE001 - surface any failure as exit code 3
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for d in dirs:
        print(d)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
