"""Precision/recall statistics and selection of fully-discriminative predicates."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .predicates import ExecutionRun, Predicate


class InsufficientRuns(ValueError):
    """Raised when the logs lack failed or successful executions."""


@dataclass(frozen=True)
class PredicateStats:
    pred_id: str
    n_failed_with: int
    n_success_with: int
    n_failed_total: int

    @property
    def precision(self) -> Fraction:
        seen = self.n_failed_with + self.n_success_with
        return Fraction(self.n_failed_with, seen) if seen else Fraction(0)

    @property
    def recall(self) -> Fraction:
        return Fraction(self.n_failed_with, self.n_failed_total)


def compute_stats(runs: Sequence[ExecutionRun]) -> dict[str, PredicateStats]:
    n_failed = sum(r.failed for r in runs)
    if n_failed == 0:
        raise InsufficientRuns("no failed executions in the predicate logs; recall is undefined")
    if n_failed == len(runs):
        raise InsufficientRuns("no successful executions in the predicate logs")
    failed_with: dict[str, int] = {}
    success_with: dict[str, int] = {}
    for run in runs:
        bucket = failed_with if run.failed else success_with
        for pid in run.observations:
            bucket[pid] = bucket.get(pid, 0) + 1
    return {
        pid: PredicateStats(pid, failed_with.get(pid, 0), success_with.get(pid, 0), n_failed)
        for pid in sorted(failed_with.keys() | success_with.keys())
    }


def fully_discriminative(
    stats: Mapping[str, PredicateStats],
    predicates: Mapping[str, Predicate] | Iterable[Predicate] | None = None,
) -> set[str]:
    """Predicates with precision = recall = 1 that can be safely intervened.

    Predicates absent from ``predicates`` are treated as safe.
    """
    if predicates is not None and not isinstance(predicates, Mapping):
        predicates = {p.pred_id: p for p in predicates}
    out = set()
    for pid, s in stats.items():
        if s.n_success_with or s.n_failed_with != s.n_failed_total:
            continue
        if predicates is not None and pid in predicates and not predicates[pid].safe_to_intervene:
            continue
        out.add(pid)
    return out


def write_stats_csv(path, stats: Mapping[str, PredicateStats], selected: set[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pred_id", "n_failed_with", "n_success_with", "n_failed_total",
                    "precision", "recall", "selected"])
        for pid in sorted(stats):
            s = stats[pid]
            w.writerow([pid, s.n_failed_with, s.n_success_with, s.n_failed_total,
                        f"{float(s.precision):.6f}", f"{float(s.recall):.6f}", int(pid in selected)])
