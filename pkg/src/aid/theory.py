"""Search-space sizes and intervention-count bounds for causal path discovery.

Logarithms are base 2.  Counting is exact (Python ints, Fractions); floats
appear only where a logarithm is taken.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .acm import AcmGraph


class NotSeriesParallel(ValueError):
    pass


# --- series-parallel decomposition --------------------------------------------


@dataclass(frozen=True)
class SpNode:
    kind: str  # "leaf", "series" or "parallel"
    children: tuple["SpNode", ...] = ()
    name: str = ""

    def count(self) -> int:
        """Candidate causal sets: subsets lying on a single path, empty set included."""
        if self.kind == "leaf":
            return 2
        counts = [c.count() for c in self.children]
        if self.kind == "series":
            return math.prod(counts)
        return 1 + sum(w - 1 for w in counts)


def _components(nodes: list[str], linked) -> list[list[str]]:
    left = set(nodes)
    out = []
    for n in nodes:
        if n not in left:
            continue
        comp, stack = [n], [n]
        left.discard(n)
        while stack:
            u = stack.pop()
            nxt = [v for v in left if linked(u, v)]
            for v in nxt:
                left.discard(v)
            comp += nxt
            stack += nxt
        out.append(sorted(comp))
    return out


def sp_decompose(g: AcmGraph, nodes: Iterable[str] | None = None) -> SpNode:
    """Decompose the precedence order on predicates into series/parallel parts.

    Raises NotSeriesParallel when some subset is connected both in the
    comparability and in the incomparability sense (an N-shaped order).
    """
    nodes = sorted(g.predicates if nodes is None else nodes)
    if not nodes:
        return SpNode("series")

    def comparable(a, b):
        return g.reaches(a, b) or g.reaches(b, a)

    def build(sub: list[str]) -> SpNode:
        if len(sub) == 1:
            return SpNode("leaf", name=sub[0])
        par = _components(sub, comparable)
        if len(par) > 1:
            return SpNode("parallel", tuple(build(c) for c in par))
        ser = _components(sub, lambda a, b: not comparable(a, b))
        if len(ser) > 1:
            ser.sort(key=lambda c: sum(g.reaches(x, c[0]) for x in sub))
            for a, b in zip(ser, ser[1:]):
                if not all(g.reaches(x, y) for x in a for y in b):
                    raise NotSeriesParallel(f"inconsistent series order around {a[0]} and {b[0]}")
            return SpNode("series", tuple(build(c) for c in ser))
        raise NotSeriesParallel(f"predicates {sub[:4]}... form an N-shaped order")

    return build(nodes)


def search_space_cpd(g: AcmGraph) -> int:
    """Number of candidate causal sets that respect the ACM."""
    return sp_decompose(g).count()


def brute_force_search_space(g: AcmGraph, limit: int = 20) -> int:
    """Enumerate every predicate subset and keep those totally ordered by the ACM."""
    preds = list(g.predicates)
    if len(preds) > limit:
        raise ValueError(f"{len(preds)} predicates is too many to enumerate")
    total = 0
    for k in range(len(preds) + 1):
        for sub in itertools.combinations(preds, k):
            if all(g.reaches(a, b) or g.reaches(b, a) for a, b in itertools.combinations(sub, 2)):
                total += 1
    return total


def search_space_gt(n: int) -> int:
    return 2**n


def search_space_symmetric(j: int, b: int, n: int) -> int:
    """J junction blocks in series, each with B parallel chains of n predicates."""
    if min(j, b, n) < 1:
        raise ValueError("J, B and n must be positive")
    return (b * (2**n - 1) + 1) ** j


def symmetric_acm(j: int, b: int, n: int, failure: str = "F") -> AcmGraph:
    nodes, edges = [], []
    prev_sinks: list[str] = []
    for jj in range(1, j + 1):
        sinks = []
        for bb in range(1, b + 1):
            chain = [f"J{jj}B{bb}P{k}" for k in range(1, n + 1)]
            nodes += chain
            edges += [(s, chain[0]) for s in prev_sinks]
            edges += list(zip(chain, chain[1:]))
            sinks.append(chain[-1])
        prev_sinks = sinks
    edges += [(s, failure) for s in prev_sinks]
    return AcmGraph.from_edges([*nodes, failure], edges, failure)


# --- bounds -------------------------------------------------------------------


def _check_nd(n: int, d: int) -> None:
    if n < 1 or d < 1:
        raise ValueError("N and D must be positive")
    if d > n:
        raise ValueError(f"D={d} exceeds N={n}")


def lower_bound_gt(n: int, d: int) -> float:
    _check_nd(n, d)
    return math.log2(math.comb(n, d))


def lower_bound_cpd(n: int, d: int, s1: int) -> float:
    """Minimum group interventions when each one discards at least s1 predicates.

    Derived under the assumption that m*s1/N is small; evaluated as is.
    """
    _check_nd(n, d)
    if s1 < 0:
        raise ValueError("S1 must be non-negative")
    return float(Fraction(n, n + d * s1)) * math.log2(math.comb(n, d))


def upper_bound_aid_branch(j: int, t: int, d: int, n_m: int) -> float:
    return j * math.log2(t) + d * math.log2(n_m)


def upper_bound_pruning(n: int, d: int, s2: int) -> float:
    """Upper bound with predicate pruning; s2 predicates discarded per causal discovery."""
    _check_nd(n, d)
    return d * math.log2(n) - float(Fraction(d * (d - 1) * s2, 2 * n))


def upper_bound_tagt(n: int, d: int) -> float:
    _check_nd(n, d)
    return d * math.log2(n)


@dataclass(frozen=True)
class BoundInputs:
    n: int
    d: int
    s1: int = 0
    s2: int = 0
    j: int = 0
    t: int = 1
    n_m: int = 0

    def __post_init__(self):
        _check_nd(self.n, self.d)
        if self.s1 < 0 or self.s2 < 0:
            raise ValueError("S1 and S2 must be non-negative")
        if self.t < 1 or self.j < 0:
            raise ValueError("T must be >= 1 and J >= 0")


def upper_bounds(x: BoundInputs) -> dict:
    n_m = x.n_m or x.n
    aid = upper_bound_aid_branch(x.j, x.t, x.d, n_m)
    tagt_paths = x.d * math.log2(x.t) + x.d * math.log2(n_m)
    return {
        "aid_branch": aid,
        "tagt_branch": tagt_paths,
        "pruning": upper_bound_pruning(x.n, x.d, x.s2),
        "tagt": upper_bound_tagt(x.n, x.d),
        # with T > 1 this holds exactly when J < D
        "aid_branch_smaller": aid < tagt_paths,
    }


@dataclass(frozen=True)
class SymmetricRow:
    method: str
    search_space: int
    lower_bound: float
    upper_bound: float


def symmetric_table(j: int, b: int, n: int, d: int, s1: int = 0, s2: int = 0) -> list[SymmetricRow]:
    """CPD and GT rows for the symmetric ACM with N = J*B*n predicates."""
    big = j * b * n
    _check_nd(big, d)
    cpd_up = j * math.log2(b) + d * math.log2(j * n) - float(Fraction(d * (d - 1) * s2, 2 * j * n))
    gt_up = d * math.log2(b) + d * math.log2(j * n) - float(Fraction(d * (d - 1), 2 * big))
    return [
        SymmetricRow("CPD", search_space_symmetric(j, b, n), lower_bound_cpd(big, d, s1), cpd_up),
        SymmetricRow("GT", search_space_gt(big), lower_bound_gt(big, d), gt_up),
    ]


# --- measured vs. predicted ---------------------------------------------------


@dataclass(frozen=True)
class BoundViolation:
    setting: int
    instance: int
    strategy: str
    measured: int
    bound: float


@dataclass(frozen=True)
class BoundCheck:
    checked: int
    violations: tuple[BoundViolation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def empirical_bound_check(results: Sequence, slack_per_cause: float = 1.0) -> BoundCheck:
    """Compare measured counts with the closed-form upper bounds.

    TAGT is held to D log N, AID to J log T + D log N_M, each plus
    ``slack_per_cause * D`` for integer rounding.  Other strategies are skipped.
    """
    bad = []
    checked = 0
    for r in results:
        if r.strategy == "tagt":
            bound = upper_bound_tagt(r.n, r.d)
        elif r.strategy == "aid":
            bound = upper_bound_aid_branch(r.j, max(r.t, 1), r.d, max(r.n_m, 1))
        else:
            continue
        bound += slack_per_cause * r.d
        checked += 1
        if r.interventions > bound + 1e-9:
            bad.append(BoundViolation(r.setting, r.instance, r.strategy, r.interventions, bound))
    return BoundCheck(checked, tuple(bad))
