"""Robustness measurement around latent displacement.

For each classifier in a group attacked over a shared instance set, report
the average latent displacement (delta_z) of its adversaries and how often
it required the largest displacement in the group. Higher numbers mean the
classifier forced candidates further from the instance's latent code before
flipping, i.e. it is the more robust member.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .classify import ClassifierHandle, accuracy
from .errors import AlignmentError, DimensionError, ExhaustionError
from .gan import GanModel
from .inverter import InverterModel
from .search import (AdversaryResult, SearchConfig, hybrid_search,
                     iterative_search, make_flip_predicate)

DEGENERATE_RHO = "degenerate: zero accuracy variance"
UNDEFINED_RHO = "undefined: a classifier had no successful searches"


def rank_correlation(accuracies: Sequence[float],
                     avg_delta_zs: Sequence[float]) -> float | str:
    """Spearman rho between accuracy and average displacement, or a
    message when the correlation is not defined."""
    if len(set(accuracies)) == 1:
        return DEGENERATE_RHO
    if any(math.isnan(v) for v in avg_delta_zs):
        return UNDEFINED_RHO
    return float(spearmanr(accuracies, avg_delta_zs).statistic)


@dataclass
class StatRow:
    classifier_id: str
    avg_delta_z: float       # nan when every search exhausted
    p_largest: float
    win_count: int
    success_count: int
    exhaustion_count: int


@dataclass
class StatsTable:
    rows: list[StatRow]
    tie_count: int
    compared_instances: int  # instances where every classifier succeeded


def _delta_of(item) -> float | None:
    if item is None:
        return None
    if isinstance(item, AdversaryResult):
        return item.delta_z
    return float(item)


def delta_z_stats(results: dict[str, Sequence]) -> StatsTable:
    """Per-classifier average delta_z and largest-delta_z share.

    Values in each per-classifier list may be AdversaryResult, plain
    floats, or None for an exhausted search. Lists must cover the same
    instances in the same order. Only instances where every classifier
    succeeded enter the largest-delta_z comparison; ties award no one.
    """
    if not results:
        raise AlignmentError("no classifier results given")
    ids = list(results.keys())
    lengths = {cid: len(results[cid]) for cid in ids}
    if len(set(lengths.values())) != 1:
        raise AlignmentError(
            f"classifiers were evaluated on differing instance counts: "
            f"{lengths}"
        )
    n = lengths[ids[0]]
    deltas = {cid: [_delta_of(v) for v in results[cid]] for cid in ids}

    wins = {cid: 0 for cid in ids}
    ties = 0
    compared = 0
    for i in range(n):
        row = [deltas[cid][i] for cid in ids]
        if any(v is None for v in row):
            continue
        compared += 1
        top = max(row)
        leaders = [cid for cid, v in zip(ids, row) if v == top]
        if len(leaders) == 1:
            wins[leaders[0]] += 1
        else:
            ties += 1

    rows = []
    for cid in ids:
        ok = [v for v in deltas[cid] if v is not None]
        avg = float(np.mean(ok)) if ok else math.nan
        p = wins[cid] / compared if compared else 0.0
        rows.append(StatRow(cid, avg, p, wins[cid], len(ok), n - len(ok)))
    return StatsTable(rows, ties, compared)


@dataclass
class FamilyMember:
    classifier_id: str
    hyperparams: str
    train: Callable[[np.ndarray, np.ndarray], ClassifierHandle]


@dataclass
class RobustnessRecord:
    classifier_id: str
    hyperparams: str
    test_accuracy: float
    delta_zs: list[float | None]   # one slot per attacked instance
    avg_delta_z: float
    p_largest: float
    win_count: int
    exhaustion_count: int

    def __post_init__(self):
        ok = [v for v in self.delta_zs if v is not None]
        if ok:
            if abs(self.avg_delta_z - float(np.mean(ok))) > 1e-9:
                raise DimensionError(
                    f"{self.classifier_id}: avg_delta_z does not match its "
                    f"per-instance list"
                )
        elif not math.isnan(self.avg_delta_z):
            raise DimensionError(
                f"{self.classifier_id}: avg_delta_z must be nan with no "
                f"successful searches"
            )

    @property
    def success_count(self) -> int:
        return sum(1 for v in self.delta_zs if v is not None)


def attack_instances(gan: GanModel, inv: InverterModel,
                     handle: ClassifierHandle, instances: np.ndarray,
                     cfg: SearchConfig, algo: str = "hybrid"
                     ) -> list[AdversaryResult | None]:
    """Run one search per instance row; None marks an exhausted search.

    Instance i uses seed cfg.seed + i, so a group of classifiers attacked
    over the same instances sees identical candidate streams.
    """
    run = {"hybrid": hybrid_search, "iterative": iterative_search}[algo]
    out: list[AdversaryResult | None] = []
    for i, x in enumerate(np.asarray(instances, dtype=np.float64)):
        predicate = make_flip_predicate(handle, x)
        try:
            out.append(run(gan, inv, predicate, x,
                           replace(cfg, seed=cfg.seed + i)))
        except ExhaustionError:
            out.append(None)
    return out


def robustness_sweep(members: Sequence[FamilyMember], train_x: np.ndarray,
                     train_y: np.ndarray, eval_x: np.ndarray,
                     eval_y: np.ndarray, gan: GanModel, inv: InverterModel,
                     cfg: SearchConfig, algo: str = "hybrid",
                     attack_count: int | None = None
                     ) -> tuple[list[RobustnessRecord], float | str]:
    """Train each family member, measure its accuracy on the eval set, and
    attack the first attack_count eval rows; returns the records plus the
    rank correlation between accuracy and average delta_z (or a message
    for the degenerate all-equal-accuracy case)."""
    if len(members) < 2:
        raise DimensionError(
            f"need at least 2 family members, got {len(members)}"
        )
    n_attack = eval_x.shape[0] if attack_count is None else attack_count
    if not 1 <= n_attack <= eval_x.shape[0]:
        raise DimensionError(
            f"attack_count must lie in [1, {eval_x.shape[0]}], got {n_attack}"
        )
    handles = []
    accuracies = []
    per_clf: dict[str, list] = {}
    for member in members:
        handle = member.train(train_x, train_y)
        handles.append(handle)
        accuracies.append(accuracy(handle, eval_x, eval_y))
        per_clf[member.classifier_id] = attack_instances(
            gan, inv, handle, eval_x[:n_attack], cfg, algo=algo)

    table = delta_z_stats(per_clf)
    records = []
    for member, acc, row in zip(members, accuracies, table.rows):
        deltas = [None if r is None else r.delta_z
                  for r in per_clf[member.classifier_id]]
        records.append(RobustnessRecord(
            member.classifier_id, member.hyperparams, acc, deltas,
            row.avg_delta_z, row.p_largest, row.win_count,
            row.exhaustion_count))

    return records, rank_correlation(accuracies,
                                     [r.avg_delta_z for r in records])


def emit_report(records: Sequence[RobustnessRecord], out_dir: str,
                rho: float | str) -> list[str]:
    """Write report.csv (one row per classifier), scatter.csv
    (accuracy, avg_delta_z pairs), and summary.txt (includes the rank
    correlation to 4 decimals). Returns the paths written."""
    if not records:
        raise DimensionError("no records to report")
    os.makedirs(out_dir, exist_ok=True)
    report = os.path.join(out_dir, "report.csv")
    scatter = os.path.join(out_dir, "scatter.csv")
    summary = os.path.join(out_dir, "summary.txt")

    with open(report, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["classifier_id", "hyperparams", "test_accuracy",
                    "avg_delta_z", "p_largest", "win_count",
                    "success_count", "exhaustion_count"])
        for r in records:
            w.writerow([r.classifier_id, r.hyperparams,
                        repr(r.test_accuracy), repr(r.avg_delta_z),
                        repr(r.p_largest), r.win_count, r.success_count,
                        r.exhaustion_count])

    with open(scatter, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["test_accuracy", "avg_delta_z"])
        for r in records:
            w.writerow([repr(r.test_accuracy), repr(r.avg_delta_z)])

    with open(summary, "w") as f:
        f.write(f"classifiers: {len(records)}\n")
        f.write(f"instances attacked: {len(records[0].delta_zs)}\n")
        total_exhaustions = sum(r.exhaustion_count for r in records)
        f.write(f"exhausted searches: {total_exhaustions}\n")
        if isinstance(rho, str):
            f.write(f"spearman rho (accuracy vs avg delta_z): {rho}\n")
        else:
            f.write(f"spearman rho (accuracy vs avg delta_z): {rho:.4f}\n")
        for r in records:
            f.write(f"  {r.classifier_id}: accuracy={r.test_accuracy:.4f} "
                    f"avg_delta_z={r.avg_delta_z:.6f} "
                    f"p_largest={r.p_largest:.4f} "
                    f"exhaustions={r.exhaustion_count}\n")
    return [report, scatter, summary]
