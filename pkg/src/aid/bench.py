"""Synthetic applications with known causal paths, and the strategy comparison harness."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .acm import AcmGraph
from .engine import Strategy, discover
from .oracle import GroundTruthModel, SimulatedOracle

FAILURE = "F"
STRATEGIES = (Strategy.AID, Strategy.AID_P, Strategy.AID_P_B, Strategy.TAGT)


class ExperimentError(RuntimeError):
    """A strategy returned a wrong causal path on a noise-free instance."""


def max_defectives(n: int) -> int:
    return max(1, math.floor(n / math.log2(n))) if n >= 2 else 1


# --- series-parallel structure ------------------------------------------------
#
# A structure is a list of items run in sequence.  An item is either a
# predicate name (str) or a parallel block: a list of >= 2 branches, each a
# structure starting with a predicate.  Two blocks are never adjacent, so
# every split fans out from one predicate straight to the branch heads.


def _compose(rng, n: int, parts: int) -> list[int]:
    """Random composition of n into `parts` positive integers."""
    cuts = sorted(rng.choice(np.arange(1, n), size=parts - 1, replace=False)) if parts > 1 else []
    bounds = [0, *map(int, cuts), n]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def _structure(rng, n: int, max_threads: int, p_parallel: float, names, lead: bool) -> list:
    """Sequence over n predicates; `lead` forces a predicate first."""
    items: list = []
    while n > 0:
        block_ok = (max_threads >= 2 and n >= 2 and not (lead and not items)
                    and not (items and isinstance(items[-1], list)))
        if block_ok and rng.random() < p_parallel:
            size = int(rng.integers(2, n + 1))
            k = int(rng.integers(2, min(max_threads, size) + 1))
            block = [_structure(rng, m, max_threads, p_parallel, names, True)
                     for m in _compose(rng, size, k)]
            items.append(block)
            n -= size
        else:
            items.append(next(names))
            n -= 1
    return items


def _edges(items: list, preds: list[str], edges: list) -> list[str]:
    """Append edges for a sequence; returns its sinks. `preds` are the entry points."""
    cur = preds
    for it in items:
        if isinstance(it, str):
            edges.extend((p, it) for p in cur)
            cur = [it]
        else:
            sinks = []
            for br in it:
                sinks += _edges(br, cur, edges)
            cur = sinks
    return cur


def series_parallel_dag(n: int, max_threads: int, rng, p_parallel: float = 0.5,
                        prefix: str = "P") -> tuple[list[str], list[tuple[str, str]]]:
    """Random series-parallel DAG on n predicates followed by the failure node."""
    width = len(str(n))
    names = iter(f"{prefix}{i:0{width}d}" for i in range(1, n + 1))
    items = _structure(rng, n, max_threads, p_parallel, names, False)
    edges: list[tuple[str, str]] = []
    sinks = _edges(items, [], edges)
    edges.extend((s, FAILURE) for s in sinks)
    nodes = [f"{prefix}{i:0{width}d}" for i in range(1, n + 1)]
    return nodes, edges


# --- instances ----------------------------------------------------------------


def _random_path(g: AcmGraph, rng) -> list[str]:
    succ: dict[str, list[str]] = {v: [] for v in g.nodes}
    has_pred = set()
    for a, b in g.reduced_edges:
        succ[a].append(b)
        has_pred.add(b)
    sources = sorted(v for v in g.nodes if v not in has_pred and v != g.failure)
    cur = sources[int(rng.integers(len(sources)))]
    path = []
    while cur != g.failure:
        path.append(cur)
        nxt = sorted(succ[cur])
        cur = nxt[int(rng.integers(len(nxt)))]
    return path


def generate_instance(max_threads: int, seed: int | Sequence[int], n_range: tuple[int, int] = (4, 284),
                      p_parallel: float = 0.5, p_free: float = 0.1, contiguous: bool = True,
                      max_tries: int = 100) -> tuple[GroundTruthModel, AcmGraph]:
    """One synthetic application.

    N is uniform in ``n_range`` (inclusive) and D uniform in [1, N/log2 N].
    The causal path is D predicates along one random source-to-failure
    path of the ACM: a contiguous run of it by default (a cause directly
    precedes its effect), or a random subset with ``contiguous=False``.
    Every other predicate is triggered by a random ACM ancestor, or directly by the hidden condition (probability ``p_free``,
    or when it has no ancestor), so all predicates are fully discriminative.
    """
    if max_threads < 2:
        raise ValueError("max_threads must be >= 2")
    lo, hi = n_range
    if lo < 2 or hi < lo:
        raise ValueError(f"bad predicate count range {n_range}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        n = int(rng.integers(lo, hi + 1))
        d = int(rng.integers(1, max_defectives(n) + 1))
        nodes, edges = series_parallel_dag(n, max_threads, rng, p_parallel)
        g = AcmGraph.from_edges([*nodes, FAILURE], edges, FAILURE)
        path = _random_path(g, rng)
        if len(path) < d:
            continue  # infeasible: resample
        if contiguous:
            at = int(rng.integers(len(path) - d + 1))
            causal = path[at:at + d]
        else:
            causal = [path[i] for i in sorted(rng.choice(len(path), size=d, replace=False))]
        parents: dict[str, str | None] = {causal[0]: None}
        for a, b in zip(causal, causal[1:]):
            parents[b] = a
        for v in nodes:
            if v in parents:
                continue
            anc = sorted(g.ancestors(v) - {FAILURE})
            if not anc or rng.random() < p_free:
                parents[v] = None
            else:
                parents[v] = anc[int(rng.integers(len(anc)))]
        model = GroundTruthModel(FAILURE, (*causal, FAILURE), parents, tuple(edges),
                                 seed=int(rng.integers(2**32)))
        return model, g
    raise RuntimeError(f"no feasible instance after {max_tries} tries")


# --- experiments --------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkConfig:
    max_threads: tuple[int, ...] = (2, 5, 10, 20)
    instances: int = 100
    n_min: int = 4
    n_max: int = 284
    p_parallel: float = 0.5
    contiguous: bool = True
    seed: int = 0
    repetitions: int = 1
    tagt_knows_d: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.instances < 1:
            raise ValueError("instances must be >= 1")
        if any(t < 2 for t in self.max_threads):
            raise ValueError("max_threads settings must be >= 2")
        if not 2 <= self.n_min <= self.n_max:
            raise ValueError("need 2 <= n_min <= n_max")

    @classmethod
    def full_scale(cls, seed: int = 0) -> "BenchmarkConfig":
        return cls(max_threads=tuple(range(2, 41)), instances=500, seed=seed)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown benchmark settings: {sorted(extra)}")
        d = dict(d)
        if "max_threads" in d:
            d["max_threads"] = tuple(int(t) for t in d["max_threads"])
        return cls(**d)


@dataclass(frozen=True)
class InstanceResult:
    setting: int
    instance: int
    strategy: str
    n: int
    d: int
    j: int
    t: int
    n_m: int
    interventions: int
    correct: bool


@dataclass(frozen=True)
class ExperimentRow:
    setting: int
    strategy: str
    mean_interventions: float
    max_interventions: int
    mean_n: float
    correctness_rate: float


def _run_instance(args) -> list[InstanceResult]:
    setting, idx, inst_seed, cfg = args
    model, g = generate_instance(setting, inst_seed, (cfg.n_min, cfg.n_max), cfg.p_parallel,
                                 contiguous=cfg.contiguous)
    j, t = g.branching()
    n_m = g.longest_path()
    d = len(model.causal_path) - 1
    out = []
    for s in STRATEGIES:
        oracle = SimulatedOracle(model, seed=idx)
        rep = discover(g, oracle, s, seed=idx, repetitions=cfg.repetitions,
                       defectives=d if cfg.tagt_knows_d else None)
        ok = tuple(rep.causal_path) == model.causal_path
        out.append(InstanceResult(setting, idx, s.value, len(g.predicates), d, j, t, n_m,
                                  rep.n_interventions, ok))
    return out


def run_instances(cfg: BenchmarkConfig, strict: bool = True) -> list[InstanceResult]:
    jobs = []
    root = np.random.SeedSequence(cfg.seed)
    for setting, ss in zip(cfg.max_threads, root.spawn(len(cfg.max_threads))):
        for idx, child in enumerate(ss.spawn(cfg.instances)):
            jobs.append((setting, idx, child.generate_state(4).tolist(), cfg))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            chunks = list(ex.map(_run_instance, jobs, chunksize=8))
    else:
        chunks = [_run_instance(j) for j in jobs]
    results = [r for c in chunks for r in c]
    bad = [r for r in results if not r.correct]
    if strict and bad:
        b = bad[0]
        raise ExperimentError(f"{len(bad)} wrong causal paths; first: strategy {b.strategy}, "
                              f"setting {b.setting}, instance {b.instance}")
    return results


def aggregate(results: Iterable[InstanceResult]) -> list[ExperimentRow]:
    groups: dict[tuple[int, str], list[InstanceResult]] = {}
    for r in results:
        groups.setdefault((r.setting, r.strategy), []).append(r)
    order = {s.value: i for i, s in enumerate(STRATEGIES)}
    rows = []
    for (setting, strat), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], order[kv[0][1]])):
        counts = [r.interventions for r in rs]
        rows.append(ExperimentRow(setting, strat, float(np.mean(counts)), max(counts),
                                  float(np.mean([r.n for r in rs])),
                                  sum(r.correct for r in rs) / len(rs)))
    return rows


def run_experiment(cfg: BenchmarkConfig, out_csv=None) -> list[ExperimentRow]:
    rows = aggregate(run_instances(cfg))
    if out_csv is not None:
        write_rows(out_csv, rows)
    return rows


def write_rows(path, rows: Sequence) -> None:
    if not rows:
        return
    names = [f.name for f in fields(rows[0])]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for r in rows:
            d = asdict(r)
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in d.items()})
