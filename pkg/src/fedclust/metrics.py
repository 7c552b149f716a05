"""Derived experiment metrics and CSV/JSON export.

Communication cost uses 4 bytes per transmitted parameter and
1 Mb = 10**6 bytes.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import Dendrogram
from .data import ClientShard
from .federation import FederationConfig, FederationHistory, run, upload_fingerprints

BYTES_PER_MB = 10**6
ROUND_COLUMNS = ["round", "num_sampled", "uplink_bytes", "downlink_bytes", "cumulative_bytes", "avg_accuracy"]
SWEEP_COLUMNS = ["lambda", "num_clusters", "final_accuracy"]


def rounds_to_target(history: FederationHistory, target: float) -> int | None:
    """First round whose average accuracy reaches ``target``; ``None`` if never."""
    for log in history.rounds:
        if log.avg_accuracy >= target:
            return log.round_index
    return None


def comm_cost_mb(history: FederationHistory, upto_round: int) -> float:
    if not 0 <= upto_round < len(history.rounds):
        raise ValueError(f"upto_round must lie in [0, {len(history.rounds)})")
    return sum(r.total_bytes for r in history.rounds[: upto_round + 1]) / BYTES_PER_MB


@dataclass(frozen=True)
class CostReport:
    target_accuracy: float
    rounds_to_target: int | None
    megabytes: float | None

    @property
    def reached(self) -> bool:
        return self.rounds_to_target is not None

    def to_dict(self) -> dict:
        return {
            "target_accuracy": self.target_accuracy,
            "rounds_to_target": self.rounds_to_target,
            "megabytes": self.megabytes,
            "units": "Mb = 1e6 bytes, 4 bytes per parameter",
        }


def cost_report(history: FederationHistory, target: float) -> CostReport:
    r = rounds_to_target(history, target)
    return CostReport(target, r, None if r is None else comm_cost_mb(history, r))


@dataclass
class SweepResult:
    entries: list[tuple[float, int, float]]  # (lambda, num_clusters, final accuracy)
    base_config: dict

    @property
    def lambdas(self) -> list[float]:
        return [e[0] for e in self.entries]

    @property
    def num_clusters(self) -> list[int]:
        return [e[1] for e in self.entries]

    @property
    def accuracies(self) -> list[float]:
        return [e[2] for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "base_config": self.base_config,
            "entries": [{"lambda": l, "num_clusters": n, "final_accuracy": a} for l, n, a in self.entries],
        }


def lambda_sweep(
    base: FederationConfig, shards: Sequence[ClientShard], lambdas: Sequence[float]
) -> SweepResult:
    """Run the full federation once per threshold.

    Round-0 fingerprints do not depend on the threshold, so they are
    computed once and shared by every run.
    """
    if len(lambdas) == 0:
        raise ValueError("need at least one lambda")
    fingerprints = upload_fingerprints(base, shards) if base.algorithm == "fedclust" else None
    entries = []
    for lam in sorted(float(l) for l in lambdas):
        hist = run(replace(base, lam=lam), shards, fingerprints)
        entries.append((lam, hist.num_clusters, hist.final_accuracy))
    return SweepResult(entries, base.to_dict())


def lambda_grid(dendrogram: Dendrogram, points: int, low_factor: float = 0.5, high_factor: float = 1.5) -> list[float]:
    """Evenly spaced thresholds from below the first merge to beyond the last.

    The first point yields all singletons and the last a single cluster.
    """
    if points < 2:
        raise ValueError("need at least two grid points")
    d = dendrogram.distances
    hi = high_factor * d.max()
    positive = d[d > 0]
    # zero-distance merges (duplicate fingerprints) cannot be undone by any threshold
    lo = low_factor * positive.min() if positive.size else hi * 1e-6
    return [float(x) for x in np.linspace(lo, hi, points)]


# ---- export ---------------------------------------------------------------

def csv_text(columns: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def rounds_csv(history: FederationHistory) -> str:
    rows, cum = [], 0
    for r in history.rounds:
        up, down = sum(r.uplink_bytes.values()), sum(r.downlink_bytes.values())
        cum += up + down
        rows.append([r.round_index, len(r.sampled_clients), up, down, cum, repr(r.avg_accuracy)])
    return csv_text(ROUND_COLUMNS, rows)


def sweep_csv(result: SweepResult) -> str:
    return csv_text(SWEEP_COLUMNS, [[repr(l), n, repr(a)] for l, n, a in result.entries])


def write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def export_history(history: FederationHistory, directory: str | Path) -> list[Path]:
    """Write ``summary.json``, ``history.jsonl`` and ``rounds.csv``."""
    d = Path(directory)
    files = [d / "summary.json", d / "history.jsonl", d / "rounds.csv"]
    write_text(files[0], dump_json(history.summary()))
    write_text(files[1], history.to_jsonl())
    write_text(files[2], rounds_csv(history))
    return files


def load_history(directory: str | Path) -> FederationHistory:
    d = Path(directory)
    summary = json.loads((d / "summary.json").read_text())
    return FederationHistory.from_files(summary, (d / "history.jsonl").read_text())


def export_sweep(result: SweepResult, directory: str | Path) -> list[Path]:
    d = Path(directory)
    files = [d / "sweep.csv", d / "sweep.json"]
    write_text(files[0], sweep_csv(result))
    write_text(files[1], dump_json(result.to_dict()))
    return files


def load_sweep(directory: str | Path) -> SweepResult:
    d = json.loads((Path(directory) / "sweep.json").read_text())
    return SweepResult(
        [(e["lambda"], e["num_clusters"], e["final_accuracy"]) for e in d["entries"]], d["base_config"]
    )


def export_cost(report: CostReport, directory: str | Path) -> list[Path]:
    d = Path(directory)
    files = [d / "cost.csv", d / "cost.json"]
    mb = "" if report.megabytes is None else repr(report.megabytes)
    r = "" if report.rounds_to_target is None else report.rounds_to_target
    write_text(files[0], "# Mb = 1e6 bytes, 4 bytes per parameter\n"
           + csv_text(["target_accuracy", "rounds_to_target", "megabytes"], [[repr(report.target_accuracy), r, mb]]))
    write_text(files[1], dump_json(report.to_dict()))
    return files


def export(obj, path: str | Path) -> list[Path]:
    """Write any result object to its CSV + JSON files under ``path``."""
    if isinstance(obj, FederationHistory):
        return export_history(obj, path)
    if isinstance(obj, SweepResult):
        return export_sweep(obj, path)
    if isinstance(obj, CostReport):
        return export_cost(obj, path)
    raise TypeError(f"cannot export {type(obj).__name__}")
