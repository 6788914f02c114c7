"""Approximate causal DAG (ACM) over fully-discriminative predicates.

Edges encode temporal precedence that held in every failed run.  The graph
stores the full transitive closure as per-node descendant bitsets; the
reduced form with explicit junction nodes is derived on demand.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .predicates import ExecutionRun, Predicate, PredicateKind

ROOT = "^"


class AcmError(ValueError):
    pass


class PrecedenceCycle(AcmError):
    """The precedence policy produced a cyclic relation."""


class Comparator(str, enum.Enum):
    START = "ByStartTime"
    END = "ByEndTime"


@dataclass(frozen=True)
class PrecedencePolicy:
    """Rules mapping a pair of predicate kinds to a time comparator.

    Rules are unordered in their kind pair (``("TooSlow", "DataRace")``
    also covers the swapped pair) and ``"*"`` matches any kind.  The first
    matching rule wins.  With no matching rule, disjoint windows are ordered
    directly and overlapping windows fall back to ``default``; a ``None``
    default leaves the pair unordered and records it as ambiguous.
    """

    rules: tuple[tuple[str, str, Comparator], ...] = ()
    default: Comparator | None = None

    def comparator(self, ka: str, kb: str) -> Comparator | None:
        for a, b, cmp in self.rules:
            if (_kmatch(a, ka) and _kmatch(b, kb)) or (_kmatch(a, kb) and _kmatch(b, ka)):
                return cmp
        return None

    @classmethod
    def from_dict(cls, d: Mapping) -> "PrecedencePolicy":
        rules = tuple(
            (r["kinds"][0], r["kinds"][1], Comparator(r["comparator"])) for r in d.get("rules", ())
        )
        default = d.get("default")
        return cls(rules, Comparator(default) if default else None)

    def to_dict(self) -> dict:
        return {
            "rules": [{"kinds": [a, b], "comparator": c.value} for a, b, c in self.rules],
            "default": self.default.value if self.default else None,
        }


def _kmatch(pattern: str, kind: str) -> bool:
    return pattern == "*" or pattern == kind


# A slow callee makes its caller slow too, so end times order TooSlow pairs.
# Every other pair is ordered only when its windows are disjoint.
DEFAULT_POLICY = PrecedencePolicy(
    rules=(
        (PredicateKind.TOO_SLOW.value, PredicateKind.TOO_SLOW.value, Comparator.END),
    ),
    default=None,
)


@dataclass(frozen=True)
class Junction:
    name: str
    kind: str  # "split" | "merge"
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]


@dataclass(frozen=True)
class Branch:
    head: str
    members: frozenset[str]


@dataclass(frozen=True, eq=False)
class AcmGraph:
    """Immutable DAG over predicate ids plus the failure predicate."""

    nodes: tuple[str, ...]
    failure: str
    _desc: tuple[int, ...] = field(repr=False)
    diagnostics: tuple[tuple[str, str], ...] = ()

    # --- construction -------------------------------------------------------

    @classmethod
    def from_edges(cls, nodes: Iterable[str], edges: Iterable[tuple[str, str]], failure: str,
                   diagnostics: Iterable[tuple[str, str]] = ()) -> "AcmGraph":
        nodes = sorted(set(nodes))
        if failure not in nodes:
            raise AcmError(f"failure predicate {failure} is not a node")
        idx = {n: i for i, n in enumerate(nodes)}
        succ: list[set[int]] = [set() for _ in nodes]
        for a, b in edges:
            if a == b:
                raise PrecedenceCycle(f"self edge on {a}")
            succ[idx[a]].add(idx[b])
        order = _toposort(len(nodes), succ)
        if order is None:
            raise PrecedenceCycle("precedence edges contain a cycle")
        desc = [0] * len(nodes)
        for u in reversed(order):
            m = 0
            for v in succ[u]:
                m |= (1 << v) | desc[v]
            desc[u] = m
        return cls(tuple(nodes), failure, tuple(desc), tuple(sorted(set(diagnostics))))

    def restrict(self, keep: Iterable[str]) -> "AcmGraph":
        keep = set(keep) | {self.failure}
        edges = [(a, b) for a in keep for b in self.descendants(a) if b in keep]
        return AcmGraph.from_edges(keep, edges, self.failure)

    # --- queries ------------------------------------------------------------

    @cached_property
    def _index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    def __contains__(self, node: str) -> bool:
        return node in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def predicates(self) -> tuple[str, ...]:
        return tuple(n for n in self.nodes if n != self.failure)

    def reaches(self, a: str, b: str) -> bool:
        """Strict reachability a ⤳ b (irreflexive)."""
        return bool(self._desc[self._index[a]] >> self._index[b] & 1)

    def descendants(self, a: str) -> set[str]:
        return self._bits(self._desc[self._index[a]])

    @cached_property
    def _anc(self) -> tuple[int, ...]:
        anc = [0] * len(self.nodes)
        for i, d in enumerate(self._desc):
            j = 0
            while d:
                if d & 1:
                    anc[j] |= 1 << i
                d >>= 1
                j += 1
        return tuple(anc)

    def ancestors(self, a: str) -> set[str]:
        return self._bits(self._anc[self._index[a]])

    def reaches_any(self, a: str, targets: Iterable[str]) -> bool:
        mask = 0
        for t in targets:
            mask |= 1 << self._index[t]
        return bool(self._desc[self._index[a]] & mask)

    def _bits(self, m: int) -> set[str]:
        out = set()
        i = 0
        while m:
            if m & 1:
                out.add(self.nodes[i])
            m >>= 1
            i += 1
        return out

    def closure_edges(self) -> list[tuple[str, str]]:
        return sorted((a, b) for a in self.nodes for b in self.descendants(a))

    @cached_property
    def levels(self) -> dict[str, int]:
        """Longest-path depth of each node from the sources."""
        lvl: dict[str, int] = {}
        # a ⤳ b implies anc(a) ⊂ anc(b), so this is a topological order
        order = sorted(self.nodes, key=lambda x: bin(self._anc[self._index[x]]).count("1"))
        for n in order:
            anc = self.ancestors(n)
            lvl[n] = 1 + max((lvl[a] for a in anc), default=-1)
        return lvl

    def topological_order(self, ranks: Mapping[str, int] | None = None,
                          within: Iterable[str] | None = None) -> list[str]:
        nodes = self.nodes if within is None else within
        ranks = ranks or {}
        return sorted(nodes, key=lambda n: (self.levels[n], ranks.get(n, 0), n))

    @cached_property
    def reduced_edges(self) -> list[tuple[str, str]]:
        """Transitive reduction: a→b with no intermediate c, a⤳c⤳b."""
        out = []
        for a in self.nodes:
            da = self._desc[self._index[a]]
            covered = 0
            for c in self._bits(da):
                covered |= self._desc[self._index[c]]
            out.extend((a, b) for b in self._bits(da & ~covered))
        return sorted(out)

    @cached_property
    def junctions(self) -> tuple[Junction, ...]:
        succ: dict[str, list[str]] = {n: [] for n in self.nodes}
        pred: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in self.reduced_edges:
            succ[a].append(b)
            pred[b].append(a)
        out = []
        sources = sorted(n for n in self.nodes if not pred[n])
        if len(sources) > 1:
            out.append(Junction(f"J>{ROOT}", "split", (), tuple(sources)))
        for n in self.nodes:
            if len(succ[n]) > 1:
                out.append(Junction(f"J>{n}", "split", (n,), tuple(sorted(succ[n]))))
            if len(pred[n]) > 1:
                out.append(Junction(f"J<{n}", "merge", tuple(sorted(pred[n])), (n,)))
        return tuple(out)

    def junction(self, name: str) -> Junction:
        for j in self.junctions:
            if j.name == name:
                return j
        raise AcmError(f"{name} is not a junction of this graph")

    def reduced_with_junctions(self) -> tuple[list[str], list[tuple[str, str]]]:
        """Reduced edges rerouted through junction nodes.

        Every predicate ends up with in- and out-degree at most 1.
        """
        split = {j.inputs[0]: j.name for j in self.junctions if j.kind == "split" and j.inputs}
        merge = {j.outputs[0]: j.name for j in self.junctions if j.kind == "merge"}
        edges = set()
        for a, b in self.reduced_edges:
            path = [a]
            if a in split:
                path.append(split[a])
            if b in merge:
                path.append(merge[b])
            path.append(b)
            edges.update(zip(path, path[1:]))
        for j in self.junctions:
            if not j.inputs:
                for s in j.outputs:
                    edges.add((j.name, merge.get(s, s)))
        nodes = list(self.nodes) + [j.name for j in self.junctions]
        return nodes, sorted(edges)

    # --- shape statistics used by the bounds --------------------------------

    def longest_path(self) -> int:
        """Maximum number of predicates (failure excluded) on any path."""
        return max((self.levels[n] + 1 for n in self.predicates), default=0)

    def branching(self) -> tuple[int, int]:
        """(number of split junctions, max branches at a split) over predicates."""
        splits = [j for j in self.junctions if j.kind == "split"]
        widths = [sum(1 for o in j.outputs if o != self.failure) for j in splits]
        widths = [w for w in widths if w > 1]
        return len(widths), max(widths, default=1)

    # --- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        nodes, redges = self.reduced_with_junctions()
        return {
            "failure": self.failure,
            "nodes": list(self.nodes),
            "levels": dict(sorted(self.levels.items())),
            "closure": [list(e) for e in self.closure_edges()],
            "reduced": [list(e) for e in self.reduced_edges],
            "junctions": [
                {"name": j.name, "kind": j.kind, "inputs": list(j.inputs), "outputs": list(j.outputs)}
                for j in self.junctions
            ],
            "reduced_with_junctions": [list(e) for e in redges],
            "diagnostics": [list(p) for p in self.diagnostics],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AcmGraph":
        edges = d.get("closure") or d.get("reduced") or []
        return cls.from_edges(d["nodes"], [tuple(e) for e in edges], d["failure"],
                              [tuple(p) for p in d.get("diagnostics", ())])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_dot(self) -> str:
        nodes, edges = self.reduced_with_junctions()
        lines = ["digraph acm {", "  rankdir=LR;"]
        for n in nodes:
            if n.startswith("J>") or n.startswith("J<"):
                lines.append(f'  "{n}" [shape=circle, label="", width=0.15];')
            elif n == self.failure:
                lines.append(f'  "{n}" [shape=doublecircle];')
            else:
                lines.append(f'  "{n}" [shape=box];')
        lines += [f'  "{a}" -> "{b}";' for a, b in edges]
        lines.append("}")
        return "\n".join(lines) + "\n"


def _toposort(n: int, succ: Sequence[set[int]]) -> list[int] | None:
    indeg = [0] * n
    for s in succ:
        for v in s:
            indeg[v] += 1
    ready = sorted(i for i in range(n) if indeg[i] == 0)
    order = []
    while ready:
        u = ready.pop()
        order.append(u)
        for v in sorted(succ[u]):
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return order if len(order) == n else None


def _order(a, b, cmp: Comparator | None) -> int | None:
    """-1 if a precedes b, 1 if b precedes a, None if unordered (tie/ambiguous)."""
    if cmp is None:
        if a.t_end < b.t_start:
            return -1
        if b.t_end < a.t_start:
            return 1
        return None
    ka, kb = (a.t_start, b.t_start) if cmp is Comparator.START else (a.t_end, b.t_end)
    if ka == kb:
        return None
    return -1 if ka < kb else 1


def build_acm(
    selected: Iterable[str],
    runs: Sequence[ExecutionRun],
    failure: str,
    policy: PrecedencePolicy = DEFAULT_POLICY,
    predicates: Mapping[str, Predicate] | None = None,
) -> AcmGraph:
    """Derive the ACM from temporal precedence in the failed runs.

    Only predicates observed in every failed run are kept.
    """
    failed = sorted((r for r in runs if r.failed), key=lambda r: r.run_id)
    if not failed:
        raise AcmError("no failed runs to derive precedence from")
    selected = set(selected) | {failure}
    keep = sorted(p for p in selected if all(p in r for r in failed))
    if failure not in keep:
        raise AcmError(f"failure predicate {failure} is not observed in every failed run")

    def kind(p):
        if predicates is not None and p in predicates:
            return predicates[p].kind.value
        return PredicateKind.CUSTOM.value

    edges = []
    witness: dict[tuple[str, str], str] = {}
    ambiguous = []
    default = policy.default
    for i, a in enumerate(keep):
        for b in keep[i + 1:]:
            cmp = policy.comparator(kind(a), kind(b))
            verdicts = set()
            for r in failed:
                oa, ob = r.observations[a], r.observations[b]
                v = _order(oa, ob, cmp)
                if v is None and cmp is None and default is not None:
                    v = _order(oa, ob, default)
                    if v is None:
                        verdicts.add(None)
                        break
                elif v is None and cmp is None:
                    ambiguous.append((a, b))
                    verdicts.add(None)
                    break
                verdicts.add(v)
                if len(verdicts) > 1:
                    break
            if verdicts == {-1}:
                edges.append((a, b))
                witness[(a, b)] = failed[0].run_id
            elif verdicts == {1}:
                edges.append((b, a))
                witness[(b, a)] = failed[0].run_id
    try:
        return AcmGraph.from_edges(keep, edges, failure, ambiguous)
    except PrecedenceCycle:
        u, v = _find_cycle_edge(keep, edges)
        raise PrecedenceCycle(
            f"precedence policy yields a cycle through {u} -> {v} (run {witness[(u, v)]})"
        ) from None


def _find_cycle_edge(nodes, edges):
    succ = {n: [] for n in nodes}
    for a, b in edges:
        succ[a].append(b)
    color = {n: 0 for n in nodes}

    def dfs(u):
        color[u] = 1
        for v in succ[u]:
            if color[v] == 1:
                return (u, v)
            if color[v] == 0:
                hit = dfs(v)
                if hit:
                    return hit
        color[u] = 2
        return None

    for n in nodes:
        if color[n] == 0:
            hit = dfs(n)
            if hit:
                return hit
    raise AssertionError("no cycle found")


# --- branches and grouping ---------------------------------------------------


def branches(g: AcmGraph, heads: Sequence[str], within: Iterable[str] | None = None) -> list[Branch]:
    """One branch per head: the head plus descendants no other head reaches."""
    scope = set(g.predicates if within is None else within) - {g.failure}
    out = []
    for h in heads:
        others = [o for o in heads if o != h]
        members = {h}
        for q in g.descendants(h):
            if q in scope and not any(o == q or g.reaches(o, q) for o in others):
                members.add(q)
        out.append(Branch(h, frozenset(members)))
    return out


def branches_at(g: AcmGraph, junction: str) -> list[Branch]:
    j = g.junction(junction)
    if j.kind != "split":
        raise AcmError(f"{junction} is a merge junction; branches start at splits")
    heads = [o for o in j.outputs if o != g.failure]
    if len(heads) < 2:
        raise AcmError(f"{junction} has fewer than two predicate children")
    return branches(g, heads)


def tie_break_ranks(nodes: Iterable[str], seed: int | np.random.Generator) -> dict[str, int]:
    """A seeded random priority per node, used to order equal-level nodes."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nodes = sorted(nodes)
    perm = rng.permutation(len(nodes))
    return {n: int(r) for n, r in zip(nodes, perm)}


def topological_halves(
    g: AcmGraph, candidates: Iterable[str], ranks: Mapping[str, int] | int | None = None
) -> tuple[list[str], list[str]]:
    """Split candidates in topological order; the first half has ceil(n/2) members."""
    cands = list(candidates)
    if isinstance(ranks, int):
        ranks = tie_break_ranks(g.nodes, ranks)
    order = g.topological_order(ranks, within=cands)
    k = math.ceil(len(order) / 2)
    return order[:k], order[k:]
