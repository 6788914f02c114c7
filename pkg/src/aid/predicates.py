"""Predicates, execution runs, and predicate extraction from method traces."""

from __future__ import annotations

import enum
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)


class PredicateKind(str, enum.Enum):
    DATA_RACE = "DataRace"
    METHOD_FAILS = "MethodFails"
    TOO_FAST = "TooFast"
    TOO_SLOW = "TooSlow"
    WRONG_RETURN = "WrongReturn"
    COMPOUND = "CompoundConjunction"
    CUSTOM = "Custom"


class RunLabel(str, enum.Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"


class TraceError(ValueError):
    """Raised for malformed or unlabeled traces."""


@dataclass(frozen=True)
class MethodEvent:
    run_id: str
    thread_id: str
    method: str
    instance_index: int
    t_start: int
    t_end: int
    objects_accessed: Mapping[str, str] = field(default_factory=dict)
    return_value: object = None
    threw_exception: bool = False

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise TraceError(f"{self.method}#{self.instance_index}: t_start > t_end")
        if self.instance_index < 1:
            raise TraceError(f"{self.method}: instance_index must be >= 1")
        for obj, mode in self.objects_accessed.items():
            if mode not in ("read", "write"):
                raise TraceError(f"{self.method}: bad access mode {mode!r} on {obj}")

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    @classmethod
    def from_dict(cls, d: Mapping) -> "MethodEvent":
        objs = d.get("objects_accessed") or {}
        if isinstance(objs, list):
            objs = {o: m for o, m in objs}
        return cls(
            run_id=str(d["run_id"]),
            thread_id=str(d["thread_id"]),
            method=d["method"],
            instance_index=int(d["instance_index"]),
            t_start=int(d["t_start"]),
            t_end=int(d["t_end"]),
            objects_accessed=dict(objs),
            return_value=d.get("return_value"),
            threw_exception=bool(d.get("threw_exception", False)),
        )

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "thread_id": self.thread_id,
            "method": self.method,
            "instance_index": self.instance_index,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "objects_accessed": dict(sorted(self.objects_accessed.items())),
            "return_value": self.return_value,
            "threw_exception": self.threw_exception,
        }


@dataclass(frozen=True)
class Predicate:
    pred_id: str
    kind: PredicateKind
    subject: tuple[str, ...] = ()
    conjuncts: tuple[str, ...] = ()
    safe_to_intervene: bool = True

    def __post_init__(self):
        if self.kind is PredicateKind.COMPOUND:
            if len(self.conjuncts) < 2:
                raise ValueError(f"{self.pred_id}: compound needs >= 2 conjuncts")
            if self.pred_id in self.conjuncts:
                raise ValueError(f"{self.pred_id}: compound refers to itself")
        elif self.conjuncts:
            raise ValueError(f"{self.pred_id}: only compound predicates have conjuncts")

    def to_dict(self) -> dict:
        return {
            "pred_id": self.pred_id,
            "kind": self.kind.value,
            "subject": list(self.subject),
            "conjuncts": list(self.conjuncts),
            "safe_to_intervene": self.safe_to_intervene,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Predicate":
        return cls(
            pred_id=d["pred_id"],
            kind=PredicateKind(d.get("kind", "Custom")),
            subject=tuple(d.get("subject", ())),
            conjuncts=tuple(d.get("conjuncts", ())),
            safe_to_intervene=bool(d.get("safe_to_intervene", True)),
        )


@dataclass(frozen=True)
class PredicateObservation:
    pred_id: str
    run_id: str
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ValueError(f"{self.pred_id} in {self.run_id}: t_start > t_end")


@dataclass(frozen=True)
class ExecutionRun:
    """One labeled execution; at most one observation per predicate."""

    run_id: str
    label: RunLabel
    observations: Mapping[str, PredicateObservation] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.label is RunLabel.FAILURE

    def __contains__(self, pred_id: str) -> bool:
        return pred_id in self.observations

    @classmethod
    def build(cls, run_id: str, label: RunLabel, observations: Iterable[PredicateObservation]):
        obs: dict[str, PredicateObservation] = {}
        for o in observations:
            if o.run_id != run_id:
                raise ValueError(f"observation {o.pred_id} belongs to run {o.run_id}, not {run_id}")
            if o.pred_id in obs:
                raise ValueError(f"duplicate observation of {o.pred_id} in run {run_id}")
            obs[o.pred_id] = o
        return cls(run_id, RunLabel(label), dict(sorted(obs.items())))

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "label": self.label.value,
            "observations": [
                {"pred_id": o.pred_id, "t_start": o.t_start, "t_end": o.t_end}
                for o in self.observations.values()
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExecutionRun":
        rid = str(d["run_id"])
        return cls.build(
            rid,
            RunLabel(d["label"]),
            (PredicateObservation(o["pred_id"], rid, int(o["t_start"]), int(o["t_end"]))
             for o in d.get("observations", ())),
        )


@dataclass
class MethodBaseline:
    min_duration: int
    max_duration: int
    return_values: set = field(default_factory=set)


def compute_baseline(
    traces: Mapping[str, Sequence[MethodEvent]], run_labels: Mapping[str, RunLabel]
) -> dict[str, MethodBaseline]:
    """Per-method duration range and return values over successful runs only."""
    baseline: dict[str, MethodBaseline] = {}
    for run_id, events in traces.items():
        if RunLabel(run_labels[run_id]) is not RunLabel.SUCCESS:
            continue
        for ev in events:
            b = baseline.get(ev.method)
            if b is None:
                b = baseline[ev.method] = MethodBaseline(ev.duration, ev.duration)
            b.min_duration = min(b.min_duration, ev.duration)
            b.max_duration = max(b.max_duration, ev.duration)
            b.return_values.add(_hashable(ev.return_value))
    return baseline


def _hashable(v):
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return v


def _pid(kind: PredicateKind, subject: Sequence[str], obj: str | None = None) -> str:
    # canonical identity: kind, sorted subject instances, object id
    s = f"{kind.value}:{'|'.join(sorted(subject))}"
    return f"{s}@{obj}" if obj is not None else s


def _inst(ev: MethodEvent) -> str:
    return f"{ev.method}#{ev.instance_index}"


def _check_instances(run_id: str, events: Sequence[MethodEvent]):
    by_method: dict[str, list[MethodEvent]] = defaultdict(list)
    for ev in events:
        if ev.run_id != run_id:
            raise TraceError(f"event {_inst(ev)} carries run_id {ev.run_id}, expected {run_id}")
        by_method[ev.method].append(ev)
    for method, evs in by_method.items():
        idx = [e.instance_index for e in sorted(evs, key=lambda e: (e.t_start, e.instance_index))]
        if idx != list(range(1, len(evs) + 1)):
            raise TraceError(f"run {run_id}: instances of {method} not consecutive by start time: {idx}")


def _races(events: Sequence[MethodEvent]):
    """Yield (pred_id, subject, window) for every racing pair of events."""
    evs = sorted(events, key=lambda e: (e.t_start, e.thread_id, e.method, e.instance_index))
    for i, a in enumerate(evs):
        if not a.objects_accessed:
            continue
        for b in evs[i + 1:]:
            if b.t_start > a.t_end:
                break
            if a.thread_id == b.thread_id:
                continue
            lo, hi = max(a.t_start, b.t_start), min(a.t_end, b.t_end)
            if lo > hi:
                continue
            for obj in sorted(set(a.objects_accessed) & set(b.objects_accessed)):
                if "write" in (a.objects_accessed[obj], b.objects_accessed[obj]):
                    subject = tuple(sorted((_inst(a), _inst(b))))
                    yield _pid(PredicateKind.DATA_RACE, subject, obj), subject, (lo, hi)


def extract_predicates(
    traces: Mapping[str, Sequence[MethodEvent]],
    run_labels: Mapping[str, RunLabel],
    baseline: Mapping[str, MethodBaseline] | None = None,
    pure_methods: Iterable[str] | None = None,
) -> tuple[list[Predicate], list[ExecutionRun]]:
    """Evaluate the predicate catalog over every run's trace.

    ``pure_methods`` lists methods a developer has declared free of side
    effects; return-value, exception and early-return interventions are only
    marked safe for those.  ``None`` declares every method pure.
    """
    for run_id, events in traces.items():
        if run_id not in run_labels:
            raise TraceError(f"run {run_id} has no label")
        if not events:
            raise TraceError(f"run {run_id} has an empty trace")
        _check_instances(run_id, events)
    if baseline is None:
        baseline = compute_baseline(traces, run_labels)
    pure = None if pure_methods is None else set(pure_methods)

    def safe(kind: PredicateKind, methods: Sequence[str]) -> bool:
        if kind in (PredicateKind.DATA_RACE, PredicateKind.TOO_FAST) or pure is None:
            return True
        return all(m in pure for m in methods)

    predicates: dict[str, Predicate] = {}
    runs: list[ExecutionRun] = []
    warned: set[tuple[str, str]] = set()

    def warn_once(method: str, what: str):
        if (method, what) not in warned:
            warned.add((method, what))
            log.warning("no usable successful-run baseline for %s; skipping %s", method, what)

    for run_id in sorted(traces):
        events = traces[run_id]
        obs: dict[str, PredicateObservation] = {}

        def emit(kind, subject, window, methods, obj=None):
            pid = _pid(kind, subject, obj)
            if pid not in predicates:
                predicates[pid] = Predicate(pid, kind, tuple(subject), (), safe(kind, methods))
            if pid not in obs:
                obs[pid] = PredicateObservation(pid, run_id, window[0], window[1])

        for pid, subject, window in _races(events):
            methods = [s.split("#")[0] for s in subject]
            emit(PredicateKind.DATA_RACE, subject, window, methods, pid.rsplit("@", 1)[1])

        for ev in sorted(events, key=lambda e: (e.t_start, e.method, e.instance_index)):
            subject = (_inst(ev),)
            window = (ev.t_start, ev.t_end)
            if ev.threw_exception:
                emit(PredicateKind.METHOD_FAILS, subject, window, [ev.method])
            b = baseline.get(ev.method)
            if b is None:
                warn_once(ev.method, "timing and return-value predicates")
                continue
            if ev.duration < b.min_duration:
                emit(PredicateKind.TOO_FAST, subject, window, [ev.method])
            if ev.duration > b.max_duration:
                emit(PredicateKind.TOO_SLOW, subject, window, [ev.method])
            if len(b.return_values) == 1:
                (expected,) = b.return_values
                if _hashable(ev.return_value) != expected:
                    emit(PredicateKind.WRONG_RETURN, subject, window, [ev.method])
            elif len(b.return_values) > 1:
                warn_once(ev.method, "WrongReturn (successful runs disagree on the return value)")

        runs.append(ExecutionRun.build(run_id, run_labels[run_id], obs.values()))

    return sorted(predicates.values(), key=lambda p: p.pred_id), runs


def evaluate_compound(conjuncts: Sequence[str], run: ExecutionRun) -> tuple[bool, tuple[int, int] | None]:
    """A conjunction holds when every conjunct holds; it completes with its last conjunct."""
    if not conjuncts:
        raise ValueError("compound predicate needs at least one conjunct")
    windows = [run.observations.get(c) for c in conjuncts]
    if any(w is None for w in windows):
        return False, None
    return True, (max(w.t_start for w in windows), max(w.t_end for w in windows))


def add_compounds(
    predicates: Sequence[Predicate],
    runs: Sequence[ExecutionRun],
    definitions: Mapping[str, Sequence[str]],
) -> tuple[list[Predicate], list[ExecutionRun]]:
    """Append user-defined conjunctive predicates and their observations."""
    known = {p.pred_id: p for p in predicates}
    new_preds = list(predicates)
    for name, conj in definitions.items():
        if name in known:
            raise ValueError(f"compound {name} collides with an existing predicate")
        missing = [c for c in conj if c not in known]
        if missing:
            raise ValueError(f"compound {name} references unknown predicates {missing}")
        safe = all(known[c].safe_to_intervene for c in conj)
        new_preds.append(Predicate(name, PredicateKind.COMPOUND, (), tuple(conj), safe))
    new_runs = []
    for run in runs:
        extra = []
        for name, conj in definitions.items():
            holds, window = evaluate_compound(conj, run)
            if holds:
                extra.append(PredicateObservation(name, run.run_id, *window))
        new_runs.append(ExecutionRun.build(run.run_id, run.label, [*run.observations.values(), *extra]))
    return sorted(new_preds, key=lambda p: p.pred_id), new_runs


# --- JSONL I/O ---------------------------------------------------------------


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(path: str | Path, rows: Iterable[Mapping]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_traces(path: str | Path) -> dict[str, list[MethodEvent]]:
    traces: dict[str, list[MethodEvent]] = defaultdict(list)
    for row in read_jsonl(path):
        ev = MethodEvent.from_dict(row)
        traces[ev.run_id].append(ev)
    return dict(traces)


def load_runs(path: str | Path) -> list[ExecutionRun]:
    return [ExecutionRun.from_dict(r) for r in read_jsonl(path)]


def save_runs(path: str | Path, runs: Iterable[ExecutionRun]) -> None:
    write_jsonl(path, (r.to_dict() for r in runs))


def load_predicates(path: str | Path) -> list[Predicate]:
    return [Predicate.from_dict(r) for r in read_jsonl(path)]


def save_predicates(path: str | Path, predicates: Iterable[Predicate]) -> None:
    write_jsonl(path, (p.to_dict() for p in predicates))
