"""Simulated application under test with a hidden ground-truth causal structure.

Every model predicate has a *parent*: the predicate whose occurrence triggers
it, or ``None`` when it is triggered directly by the hidden failure-inducing
condition (the root cause is always such a predicate).  In a failing-mode
execution a predicate occurs iff it is not intervened and its parent occurs.
The failure occurs iff the last predicate on the causal path occurs.
"""

from __future__ import annotations

import heapq
import json
import subprocess
import sys
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .acm import AcmGraph
from .predicates import ExecutionRun, PredicateObservation, RunLabel

SLOT = 100  # ns between consecutive schedule positions
WIDTH = 50  # observation window width; < SLOT so windows never overlap


class OracleError(RuntimeError):
    """The system under test could not execute an intervention."""


class ModelError(ValueError):
    pass


class Oracle(Protocol):
    def intervene(self, predicates: frozenset[str], repetitions: int) -> list[ExecutionRun]:
        ...


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    failure: str
    causal_path: tuple[str, ...]
    parents: Mapping[str, str | None]
    precedence: tuple[tuple[str, str], ...]
    noise: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        path = self.causal_path
        if len(path) < 2 or path[-1] != self.failure:
            raise ModelError("causal path must hold at least a root cause and end at the failure")
        if self.failure in self.parents:
            raise ModelError("the failure is driven by the causal path, not by a parent entry")
        if self.parents.get(path[0], "missing") is not None:
            raise ModelError("the root cause must have no parent predicate")
        for a, b in zip(path[:-2], path[1:-1]):
            if self.parents.get(b) != a:
                raise ModelError(f"causal path is broken between {a} and {b}")
        for p, par in self.parents.items():
            if par is not None and par not in self.parents:
                raise ModelError(f"{p} has unknown parent {par}")
        overlap = set(self.noise) & (set(self.parents) | {self.failure})
        if overlap:
            raise ModelError(f"noise predicates collide with model predicates: {sorted(overlap)}")
        for p, q in self.noise.items():
            if not 0.0 <= q <= 1.0:
                raise ModelError(f"noise probability of {p} outside [0, 1]")
        self._topo  # raises on parent cycles
        g = self.precedence_graph
        for p, par in self.parents.items():
            if par is not None and not g.reaches(par, p):
                raise ModelError(f"parent {par} does not temporally precede {p}")
        if not g.reaches(path[-2], self.failure):
            raise ModelError("the last causal predicate does not precede the failure")

    @property
    def root_cause(self) -> str:
        return self.causal_path[0]

    @property
    def predicates(self) -> tuple[str, ...]:
        return tuple(sorted(self.parents))

    @property
    def correlated_predicates(self) -> set[str]:
        causal = set(self.causal_path)
        return {p for p in self.parents if p not in causal}

    @cached_property
    def precedence_graph(self) -> AcmGraph:
        return AcmGraph.from_edges([*self.parents, self.failure], self.precedence, self.failure)

    @cached_property
    def _topo(self) -> tuple[str, ...]:
        order, seen, onstack = [], set(), set()

        def visit(p):
            if p in onstack:
                raise ModelError(f"parent cycle through {p}")
            if p in seen:
                return
            onstack.add(p)
            par = self.parents[p]
            if par is not None:
                visit(par)
            onstack.discard(p)
            seen.add(p)
            order.append(p)

        for p in sorted(self.parents):
            visit(p)
        return tuple(order)

    @cached_property
    def schedules(self) -> tuple[tuple[str, ...], ...]:
        """Linear extensions of the precedence DAG that flip every unordered pair."""
        return tuple(covering_linear_extensions(self.precedence_graph))

    def fires(self, intervened: Iterable[str]) -> set[str]:
        """Model predicates (and the failure) occurring in a failing-mode run."""
        blocked = set(intervened)
        on: set[str] = set()
        for p in self._topo:
            par = self.parents[p]
            if p not in blocked and (par is None or par in on):
                on.add(p)
        if self.causal_path[-2] in on:
            on.add(self.failure)
        return on

    # --- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "failure": self.failure,
            "causal_path": list(self.causal_path),
            "parents": dict(sorted(self.parents.items())),
            "precedence": [list(e) for e in self.precedence],
            "noise": dict(sorted(self.noise.items())),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruthModel":
        return cls(
            failure=d["failure"],
            causal_path=tuple(d["causal_path"]),
            parents=dict(d["parents"]),
            precedence=tuple(tuple(e) for e in d["precedence"]),
            noise=dict(d.get("noise", {})),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def load(cls, path) -> "GroundTruthModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def covering_linear_extensions(g: AcmGraph) -> list[tuple[str, ...]]:
    """Deterministic topological orders in which every incomparable pair of
    nodes appears in both relative orders."""
    nodes = g.nodes
    todo = {(a, b) for a in nodes for b in nodes
            if a != b and not g.reaches(a, b) and not g.reaches(b, a)}
    orders: list[tuple[str, ...]] = []

    def extension(key) -> tuple[str, ...]:
        placed, left = [], set(nodes)
        while left:
            nxt = min((n for n in left if not (g.ancestors(n) & left)), key=key)
            placed.append(nxt)
            left.discard(nxt)
        return tuple(placed)

    def absorb(order):
        pos = {n: i for i, n in enumerate(order)}
        todo.difference_update([(a, b) for a, b in todo if pos[a] < pos[b]])
        orders.append(order)

    absorb(extension(lambda n: n))
    while todo:
        # ancestors of `a` first, then `a`: puts a before every b it is unordered with
        a = min(todo)[0]
        first = g.ancestors(a) | {a}
        absorb(extension(lambda n: (n not in first, n)))
    return orders


def random_linear_extension(g: AcmGraph, rng: np.random.Generator) -> tuple[str, ...]:
    pri = {n: float(x) for n, x in zip(g.nodes, rng.random(len(g.nodes)))}
    indeg = {n: 0 for n in g.nodes}
    succ: dict[str, list[str]] = {n: [] for n in g.nodes}
    for a, b in g.reduced_edges:
        succ[a].append(b)
        indeg[b] += 1
    heap = [(pri[n], n) for n in g.nodes if indeg[n] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        _, n = heapq.heappop(heap)
        out.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(heap, (pri[m], m))
    return tuple(out)


def _window(pos: int) -> tuple[int, int]:
    start = SLOT * (pos + 1)
    return start, start + WIDTH


def simulate(model: GroundTruthModel, intervention: Iterable[str], n_runs: int,
             seed: int = 0, run_prefix: str = "r",
             schedules: Sequence[tuple[str, ...]] | None = None) -> list[ExecutionRun]:
    """Failing-mode executions of the model under an intervention.

    Run k follows ``schedules[k % len(schedules)]`` when schedules are given,
    otherwise a random linear extension of the precedence DAG.
    """
    intervention = frozenset(intervention)
    if n_runs <= 0:
        raise ValueError("n_runs must be positive")
    unknown = intervention - set(model.parents)
    if unknown:
        raise ModelError(f"cannot intervene on predicates outside the model: {sorted(unknown)}")
    rng = np.random.default_rng([model.seed, seed])
    on = model.fires(intervention)
    label = RunLabel.FAILURE if model.failure in on else RunLabel.SUCCESS
    runs = []
    for k in range(n_runs):
        rid = f"{run_prefix}{k:04d}"
        if schedules:
            sched = schedules[k % len(schedules)]
        else:
            sched = random_linear_extension(model.precedence_graph, rng)
        obs = [PredicateObservation(p, rid, *_window(i)) for i, p in enumerate(sched) if p in on]
        obs += _noise(model, rng, rid, len(sched))
        runs.append(ExecutionRun.build(rid, label, obs))
    return runs


def _noise(model, rng, rid, n_slots):
    out = []
    for p in sorted(model.noise):
        if rng.random() < model.noise[p]:
            start = int(rng.integers(0, SLOT * (n_slots + 1)))
            out.append(PredicateObservation(p, rid, start, start + WIDTH))
    return out


def observe(model: GroundTruthModel, n_success: int, n_failed: int, seed: int = 0) -> list[ExecutionRun]:
    """Observational predicate logs: failing runs plus runs where the hidden
    failure-inducing condition is absent (only noise predicates occur).

    Failing runs cycle through covering schedules so that every
    pair of unordered predicates is seen in both orders when n_failed allows.
    """
    failed = simulate(model, (), n_failed, seed, run_prefix="f",
                      schedules=model.schedules) if n_failed else []
    rng = np.random.default_rng([model.seed, seed, 1])
    ok = []
    for k in range(n_success):
        rid = f"s{k:04d}"
        ok.append(ExecutionRun.build(rid, RunLabel.SUCCESS, _noise(model, rng, rid, len(model.precedence_graph))))
    return ok + failed


class SimulatedOracle:
    """Deterministic oracle: the k-th intervention uses sub-seed (seed, k)."""

    def __init__(self, model: GroundTruthModel, seed: int = 0):
        self.model = model
        self.seed = seed
        self.calls = 0

    def intervene(self, predicates: frozenset[str], repetitions: int) -> list[ExecutionRun]:
        sub = int(np.random.SeedSequence([self.seed, self.calls]).generate_state(1)[0])
        self.calls += 1
        return simulate(self.model, predicates, repetitions, seed=sub, run_prefix=f"i{self.calls}-")


class CommandOracle:
    """Shells out once per intervention.

    The command receives ``{"intervene": [...], "repetitions": R, "seed": k}``
    on stdin and must print the resulting runs as JSON Lines.
    """

    def __init__(self, command: Sequence[str], timeout: float | None = None):
        self.command = list(command)
        self.timeout = timeout
        self.calls = 0

    def intervene(self, predicates: frozenset[str], repetitions: int) -> list[ExecutionRun]:
        request = {"intervene": sorted(predicates), "repetitions": repetitions, "seed": self.calls}
        self.calls += 1
        try:
            proc = subprocess.run(self.command, input=json.dumps(request), capture_output=True,
                                  text=True, timeout=self.timeout, check=False)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise OracleError(f"oracle command failed: {exc}") from exc
        if proc.returncode != 0:
            raise OracleError(f"oracle exited with {proc.returncode}: {proc.stderr.strip()}")
        try:
            return [ExecutionRun.from_dict(json.loads(l)) for l in proc.stdout.splitlines() if l.strip()]
        except (ValueError, KeyError) as exc:
            raise OracleError(f"oracle produced malformed runs: {exc}") from exc


def serve(model: GroundTruthModel, stdin: IO[str] = sys.stdin, stdout: IO[str] = sys.stdout) -> None:
    """Answer one intervention request (the CommandOracle protocol)."""
    req = json.loads(stdin.read())
    runs = simulate(model, req.get("intervene", ()), int(req.get("repetitions", 1)),
                    seed=int(req.get("seed", 0)))
    for r in runs:
        stdout.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


# --- golden fixture -----------------------------------------------------------

# Tie-break seed under which the junction after P3 tries the P4 branch first.
FIGURE3_SEED = 0


def golden_fixture_figure3() -> tuple[GroundTruthModel, AcmGraph]:
    """The 11-predicate walkthrough: true causal path P1 → P2 → P11 → F.

    Precedence (reduced): P1→P2→P3, a split after P3 into P4→P5→P6 and P7,
    a split after P7 into P8→P9 and P11, and merges P6,P11 → P10 and
    P9,P10 → F.  The position of P10 is inferred: the branch after P3
    headed by P7 must contain P11 but not P10, so P10 is placed after both
    P6 and P11.  P10 is triggered by P3 and P7 by P1, so intervening on P2
    leaves P7 running and intervening on P3 silences P10.
    """
    precedence = (
        ("P1", "P2"), ("P2", "P3"),
        ("P3", "P4"), ("P4", "P5"), ("P5", "P6"), ("P6", "P10"),
        ("P3", "P7"), ("P7", "P8"), ("P8", "P9"), ("P9", "F"),
        ("P7", "P11"), ("P11", "P10"), ("P10", "F"),
    )
    parents = {
        "P1": None, "P2": "P1", "P11": "P2",
        "P3": "P2", "P10": "P3", "P7": "P1",
        "P4": "P3", "P5": "P4", "P6": "P5",
        "P8": "P7", "P9": "P8",
    }
    model = GroundTruthModel(
        failure="F",
        causal_path=("P1", "P2", "P11", "F"),
        parents=parents,
        precedence=precedence,
    )
    return model, model.precedence_graph
