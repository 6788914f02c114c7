"""Adaptive group intervention over the ACM, and the plain group-testing baseline."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .acm import AcmGraph, Branch, branches, tie_break_ranks, topological_halves
from .oracle import Oracle, OracleError
from .predicates import ExecutionRun, Predicate


class Strategy(str, enum.Enum):
    AID = "aid"
    AID_P = "aid-p"
    AID_P_B = "aid-p-b"
    TAGT = "tagt"


class UnsafeIntervention(ValueError):
    pass


class AssumptionViolation(RuntimeError):
    """The discovered causal set is not a single path."""


@dataclass(frozen=True)
class InterventionRequest:
    predicates: frozenset[str]
    repetitions: int = 1

    def __post_init__(self):
        if not self.predicates:
            raise ValueError("empty intervention")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass(frozen=True)
class InterventionResult:
    runs: tuple[ExecutionRun, ...]

    @property
    def failure_stopped(self) -> bool:
        """True iff no run failed; one failing run is a counterexample."""
        return not any(r.failed for r in self.runs)


@dataclass
class Round:
    index: int
    phase: str  # "branch" or "chain"
    intervened: tuple[str, ...]
    failure_stopped: bool
    n_runs: int
    n_failed: int
    branch_heads: tuple[str, ...] = ()
    pruned: list[str] = field(default_factory=list)
    confirmed: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "index": self.index,
            "phase": self.phase,
            "intervened": list(self.intervened),
            "failure_stopped": self.failure_stopped,
            "n_runs": self.n_runs,
            "n_failed": self.n_failed,
            "pruned": sorted(self.pruned),
            "confirmed": list(self.confirmed),
        }
        if self.branch_heads:
            d["branch_heads"] = list(self.branch_heads)
        return d


@dataclass
class DiscoveryReport:
    causal_path: list[str]
    spurious: set[str]
    rounds: list[Round]
    strategy: Strategy
    seed: int
    repetitions: int
    version: str = __version__
    message: str = ""

    @property
    def n_interventions(self) -> int:
        return len(self.rounds)

    @property
    def found(self) -> bool:
        return bool(self.causal_path)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "strategy": self.strategy.value,
            "seed": self.seed,
            "repetitions": self.repetitions,
            "causal_path": list(self.causal_path),
            "spurious": sorted(self.spurious),
            "n_interventions": self.n_interventions,
            "rounds": [r.to_dict() for r in self.rounds],
            "message": self.message,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def interventional_prune(runs: Sequence[ExecutionRun], intervened: Iterable[str],
                         others: Iterable[str], g: AcmGraph) -> set[str]:
    """Predicates ruled out as counterfactual causes by one intervention.

    The intervened group goes if any run failed.  A non-intervened predicate
    goes if some run shows it without the failure or the failure without it,
    unless it precedes an intervened predicate (its effect may be muted).
    """
    if not runs:
        raise ValueError("interventional pruning needs at least one run")
    intervened = set(intervened)
    out = set(intervened) if any(r.failed for r in runs) else set()
    for p in others:
        if p in intervened or g.reaches_any(p, intervened):
            continue
        if any((p in r) != r.failed for r in runs):
            out.add(p)
    return out


class _Session:
    def __init__(self, g: AcmGraph, oracle: Oracle, ranks: Mapping[str, int], repetitions: int,
                 predicates: Mapping[str, Predicate] | None):
        self.g = g
        self.oracle = oracle
        self.ranks = ranks
        self.reps = repetitions
        self.meta = predicates or {}
        self.rounds: list[Round] = []
        self.causal: set[str] = set()
        self.spurious: set[str] = set()
        self.undecided: set[str] = set()

    def intervene(self, preds: Iterable[str], phase: str, heads: Sequence[str] = ()):
        req = InterventionRequest(frozenset(preds), self.reps)
        unsafe = sorted(p for p in req.predicates if p in self.meta and not self.meta[p].safe_to_intervene)
        if unsafe:
            raise UnsafeIntervention(f"refusing to intervene on unsafe predicates {unsafe}")
        if self.g.failure in req.predicates:
            raise UnsafeIntervention("the failure itself cannot be intervened")
        try:
            runs = tuple(self.oracle.intervene(req.predicates, req.repetitions))
        except OracleError:
            raise
        except Exception as exc:
            raise OracleError(f"round {len(self.rounds) + 1}: {exc}") from exc
        if not runs:
            raise OracleError(f"round {len(self.rounds) + 1}: oracle returned no runs")
        for r in runs:
            leaked = sorted(p for p in req.predicates if p in r)
            if leaked:
                raise OracleError(f"run {r.run_id} still shows intervened predicates {leaked}")
        res = InterventionResult(runs)
        rnd = Round(len(self.rounds) + 1, phase, tuple(sorted(req.predicates)), res.failure_stopped,
                    len(runs), sum(r.failed for r in runs), tuple(heads))
        self.rounds.append(rnd)
        return res, rnd

    # -- GIWP --------------------------------------------------------------

    def giwp(self, pool: Iterable[str], prune: bool) -> None:
        pool = [p for p in pool if p not in self.causal and p not in self.spurious]
        while pool:
            first, rest = topological_halves(self.g, pool, self.ranks)
            res, rnd = self.intervene(first, "chain")
            if res.failure_stopped:
                if len(first) == 1:
                    self.causal.add(first[0])
                    self.undecided.discard(first[0])
                    rnd.confirmed.append(first[0])
                else:
                    self.giwp(first, prune)
            else:
                self._drop(first, rnd)
            if prune:
                others = self.undecided - set(first)
                self._drop(interventional_prune(res.runs, first, others, self.g) - set(first), rnd)
            pool = [p for p in rest if p not in self.spurious]

    def _drop(self, preds: Iterable[str], rnd: Round) -> None:
        for p in preds:
            if p not in self.spurious and p not in self.causal:
                self.spurious.add(p)
                self.undecided.discard(p)
                rnd.pruned.append(p)

    # -- branch pruning ----------------------------------------------------

    def resolve_junction(self, bs: list[Branch]) -> Branch:
        """Halve the branch list until one remains.

        At most one branch can hold the causal path, and the failure occurs
        without intervention, so the last branch standing is kept untested.
        """
        pool = sorted(bs, key=lambda b: (self.g.levels[b.head], self.ranks.get(b.head, 0), b.head))
        while len(pool) > 1:
            k = math.ceil(len(pool) / 2)
            half, rest = pool[:k], pool[k:]
            members = set().union(*(b.members for b in half))
            heads = [b.head for b in half]
            res, rnd = self.intervene(members, "branch", heads)
            dead = rest if res.failure_stopped else half
            self._drop(set().union(*(b.members for b in dead)), rnd)
            pool = half if res.failure_stopped else rest
        return pool[0]

    def branch_prune(self) -> set[str]:
        g = self.g
        v = {p for p in g.predicates if g.reaches(p, g.failure)}
        for p in set(g.predicates) - v:
            self.spurious.add(p)
        chain: list[str] = []
        while True:
            rest = v - set(chain)
            if not rest:
                break
            # lowest level of what is left: nothing left precedes these
            low = sorted(p for p in rest if not (g.ancestors(p) & rest))
            if len(low) == 1:
                chain.append(low[0])
            else:
                bs = branches(g, low, within=v)
                before = set(self.spurious)
                chain.append(self.resolve_junction(bs).head)
                v -= self.spurious - before
            last = chain[-1]
            cut = {p for p in v if p not in chain and not g.reaches(last, p)}
            if cut:
                self.spurious |= cut
                v -= cut
        self.undecided = set(v)
        return v


def _report(sess: _Session, strategy: Strategy, seed: int, reps: int, order: Sequence[str]) -> DiscoveryReport:
    g = sess.g
    path = [p for p in order if p in sess.causal]
    msg = ""
    for a, b in zip(path, path[1:]):
        if not g.reaches(a, b):
            raise AssumptionViolation(
                f"causal predicates {a} and {b} are unordered; the failure has more than one causal path")
    if path:
        path.append(g.failure)
    else:
        msg = "no counterfactual cause found"
    return DiscoveryReport(path, set(sess.spurious), sess.rounds, strategy, seed, reps, message=msg)


def causal_path_discovery(g: AcmGraph, oracle: Oracle, *, flag_branch_prune: bool = True,
                          prune: bool = True, seed: int = 0, repetitions: int = 1,
                          predicates: Mapping[str, Predicate] | None = None,
                          strategy: Strategy | None = None) -> DiscoveryReport:
    rng = np.random.default_rng(seed)
    ranks = tie_break_ranks(g.nodes, rng)
    sess = _Session(g, oracle, ranks, repetitions, predicates)
    if flag_branch_prune:
        cands = sess.branch_prune()
    else:
        cands = {p for p in g.predicates if g.reaches(p, g.failure)}
        sess.spurious |= set(g.predicates) - cands
        sess.undecided = set(cands)
    sess.giwp(cands, prune)
    if strategy is None:
        strategy = Strategy.AID if prune else (Strategy.AID_P if flag_branch_prune else Strategy.AID_P_B)
    return _report(sess, strategy, seed, repetitions, g.topological_order(ranks))


def giwp(candidates: Iterable[str], g: AcmGraph, oracle: Oracle, *, prune: bool = True,
         seed: int = 0, repetitions: int = 1) -> tuple[set[str], set[str], list[Round]]:
    """Group intervention with pruning over a candidate set.

    Returns (causal, spurious, rounds).  Pruning may also discard
    predicates of ``g`` outside the candidates only if they are candidates;
    the rest of the graph is used for reachability alone.
    """
    cands = set(candidates)
    if g.failure in cands:
        raise ValueError("the failure predicate cannot be a candidate")
    sess = _Session(g, oracle, tie_break_ranks(g.nodes, seed), repetitions, None)
    sess.undecided = set(cands)
    sess.giwp(cands, prune)
    return sess.causal, sess.spurious, sess.rounds


def branch_prune(g: AcmGraph, oracle: Oracle, *, seed: int = 0,
                 repetitions: int = 1) -> tuple[AcmGraph, set[str], list[Round]]:
    """Reduce the ACM to the chain that can hold the causal path."""
    sess = _Session(g, oracle, tie_break_ranks(g.nodes, seed), repetitions, None)
    keep = sess.branch_prune()
    return g.restrict(keep), sess.spurious, sess.rounds


def tagt(candidates: Iterable[str], failure: str, oracle: Oracle, *, seed: int = 0,
         repetitions: int = 1, defectives: int | None = None,
         predicates: Mapping[str, Predicate] | None = None) -> DiscoveryReport:
    """Adaptive group testing by binary splitting, ignoring precedence.

    With ``defectives`` known the search stops once that many causes are
    found; otherwise each new search first checks the remaining pool.
    The predicate left after halving a pool known to hold a cause is
    reported without a separate singleton test.
    """
    cands = sorted(set(candidates) - {failure})
    rng = np.random.default_rng(seed)
    order = [cands[i] for i in rng.permutation(len(cands))]
    g = AcmGraph.from_edges([*cands, failure], [], failure)
    sess = _Session(g, oracle, {}, repetitions, predicates)
    found: list[str] = []
    pool = list(order)
    positive = True  # the failure reproduces, so some candidate is causal
    left = defectives
    while pool:
        if left == 0:
            sess.spurious |= set(pool)
            break
        if left is not None and len(pool) == left:
            found += pool
            break
        if not positive:
            res, rnd = sess.intervene(pool, "chain")
            if not res.failure_stopped:
                sess._drop(pool, rnd)
                break
        grp = list(pool)
        unknown: list[str] = []
        while len(grp) > 1:
            k = math.ceil(len(grp) / 2)
            res, rnd = sess.intervene(grp[:k], "chain")
            if res.failure_stopped:
                unknown += grp[k:]
                grp = grp[:k]
            else:
                sess._drop(grp[:k], rnd)
                grp = grp[k:]
        found.append(grp[0])
        if sess.rounds:
            sess.rounds[-1].confirmed.append(grp[0])
        pool = [p for p in pool if p not in sess.spurious and p != grp[0]]
        if left is not None:
            left -= 1
        positive = left is not None and left > 0
    sess.causal = set(found)
    # no precedence here: the path comes back in name order and discover()
    # reorders it against the ACM
    return DiscoveryReport(sorted(found) + [failure] if found else [], sess.spurious - sess.causal,
                          sess.rounds, Strategy.TAGT, seed, repetitions,
                          message="" if found else "no counterfactual cause found")


def discover(g: AcmGraph, oracle: Oracle, strategy: Strategy | str = Strategy.AID, *, seed: int = 0,
             repetitions: int = 1, predicates: Mapping[str, Predicate] | None = None,
             defectives: int | None = None) -> DiscoveryReport:
    strategy = Strategy(strategy)
    if strategy is Strategy.TAGT:
        cands = [p for p in g.predicates if g.reaches(p, g.failure)]
        rep = tagt(cands, g.failure, oracle, seed=seed, repetitions=repetitions,
                   defectives=defectives, predicates=predicates)
        rep.spurious |= set(g.predicates) - set(cands)
        causal = rep.causal_path[:-1]
        ordered = g.topological_order(within=causal)
        for a, b in zip(ordered, ordered[1:]):
            if not g.reaches(a, b):
                raise AssumptionViolation(
                    f"causal predicates {a} and {b} are unordered; the failure has more than one causal path")
        rep.causal_path = ordered + [g.failure] if causal else []
        return rep
    return causal_path_discovery(
        g, oracle,
        flag_branch_prune=strategy is not Strategy.AID_P_B,
        prune=strategy is Strategy.AID,
        seed=seed, repetitions=repetitions, predicates=predicates, strategy=strategy,
    )


def one_at_a_time(g: AcmGraph, oracle: Oracle, repetitions: int = 1) -> tuple[list[str], list[Round]]:
    """Intervene on every predicate separately, in topological order."""
    sess = _Session(g, oracle, {}, repetitions, None)
    order = g.topological_order(within=g.predicates)
    for p in order:
        res, rnd = sess.intervene([p], "chain")
        if res.failure_stopped:
            sess.causal.add(p)
            rnd.confirmed.append(p)
        else:
            sess._drop([p], rnd)
    return [p for p in order if p in sess.causal], sess.rounds
