"""Command-line entry point: ``aid <stage> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shlex
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .acm import DEFAULT_POLICY, AcmGraph, PrecedencePolicy, build_acm
from .bench import BenchmarkConfig, aggregate, run_instances, write_rows
from .engine import Strategy, discover
from .oracle import (CommandOracle, GroundTruthModel, SimulatedOracle, golden_fixture_figure3, observe,
                     serve)
from .predicates import (RunLabel, add_compounds, extract_predicates, load_predicates, load_runs,
                         load_traces, save_predicates, save_runs)
from .sd_filter import compute_stats, fully_discriminative, write_stats_csv
from .theory import BoundInputs, symmetric_table, upper_bounds

log = logging.getLogger("aid")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage {stage}: {exc}")
        self.stage = stage


# --- small helpers ----------------------------------------------------------


def _load_labels(path) -> dict[str, RunLabel]:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = [json.loads(l) for l in text.splitlines() if l.strip()]
    if isinstance(data, list):
        data = {row["run_id"]: row["label"] for row in data}
    return {str(k): RunLabel(v) for k, v in data.items()}


def _load_policy(path) -> PrecedencePolicy:
    if path is None:
        return DEFAULT_POLICY
    with open(path) as fh:
        return PrecedencePolicy.from_dict(json.load(fh))


def _split_list(s: str | None) -> list[str] | None:
    if s is None:
        return None
    return [x.strip() for x in s.split(",") if x.strip()]


def _ints(s: str, n: int, what: str) -> list[int]:
    parts = [int(x) for x in s.split(",")]
    if len(parts) != n:
        raise ValueError(f"{what} needs {n} comma-separated integers")
    return parts


def _make_oracle(spec: str, seed: int):
    if os.path.isfile(spec):
        return SimulatedOracle(GroundTruthModel.load(spec), seed=seed)
    return CommandOracle(shlex.split(spec))


def _write_acm(g: AcmGraph, out: Path, dot: Path | None):
    if out.suffix == ".dot":
        dot, out = out, out.with_suffix(".json")
    out.write_text(g.to_json() + "\n")
    if dot is not None:
        dot.write_text(g.to_dot())


def _selected_failure_check(selected, failure):
    if failure not in selected:
        raise ValueError(f"failure predicate {failure} is not fully discriminative in the logs")


# --- pipeline ---------------------------------------------------------------


@dataclass
class StudyManifest:
    out_dir: Path
    failure: str = "F"
    seed: int = 0
    repetitions: int = 1
    strategy: Strategy = Strategy.AID
    traces: Path | None = None
    labels: Path | None = None
    logs: Path | None = None
    predicates: Path | None = None
    policy: Path | None = None
    model: Path | None = None
    oracle_command: str | None = None
    pure_methods: list[str] | None = None
    compounds: dict = field(default_factory=dict)
    observe_success: int = 20
    observe_failed: int = 20

    @classmethod
    def load(cls, path) -> "StudyManifest":
        path = Path(path)
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
        base = path.parent

        def p(key):
            return (base / d[key]) if key in d else None

        m = cls(
            out_dir=base / d.get("out_dir", "aid-out"),
            failure=d.get("failure", "F"),
            seed=int(d.get("seed", 0)),
            repetitions=int(d.get("repetitions", 1)),
            strategy=Strategy(d.get("strategy", "aid")),
            traces=p("traces"), labels=p("labels"), logs=p("logs"),
            predicates=p("predicates"), policy=p("policy"), model=p("model"),
            oracle_command=d.get("oracle_command"),
            pure_methods=d.get("pure_methods"),
            compounds=d.get("compounds", {}),
            observe_success=int(d.get("observe_success", 20)),
            observe_failed=int(d.get("observe_failed", 20)),
        )
        m.validate()
        return m

    def validate(self):
        for name in ("traces", "labels", "logs", "predicates", "policy", "model"):
            f = getattr(self, name)
            if f is not None and not f.is_file():
                raise FileNotFoundError(f"manifest {name} file {f} does not exist")
        if self.traces is not None and self.labels is None:
            raise ValueError("manifest lists traces but no labels")
        if self.traces is None and self.logs is None and self.model is None:
            raise ValueError("manifest needs traces, logs, or a model to observe")
        if self.model is None and self.oracle_command is None:
            raise ValueError("manifest needs a model or an oracle_command to intervene with")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def run_pipeline(m: StudyManifest):
    """extract -> filter -> acm -> discover, writing every intermediate artifact."""
    out = m.out_dir
    out.mkdir(parents=True, exist_ok=True)
    observe_seed, oracle_seed = (int(x) for x in np.random.SeedSequence(m.seed).generate_state(2))
    model = GroundTruthModel.load(m.model) if m.model is not None else None

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            raise StageError(name, exc) from exc

    def extract():
        preds = load_predicates(m.predicates) if m.predicates else None
        if m.traces is not None:
            preds, runs = extract_predicates(load_traces(m.traces), _load_labels(m.labels),
                                             pure_methods=m.pure_methods)
            if m.compounds:
                preds, runs = add_compounds(preds, runs, m.compounds)
            save_predicates(out / "predicates.jsonl", preds)
        elif m.logs is not None:
            runs = load_runs(m.logs)
        else:
            runs = observe(model, m.observe_success, m.observe_failed, seed=observe_seed)
        save_runs(out / "runs.jsonl", runs)
        return preds, runs

    preds, runs = stage("extract", extract)
    meta = {p.pred_id: p for p in preds} if preds else None

    def filt():
        stats = compute_stats(runs)
        sel = fully_discriminative(stats, meta)
        write_stats_csv(out / "stats.csv", stats, sel)
        _selected_failure_check(sel, m.failure)
        return sel

    selected = stage("filter", filt)

    def acm():
        g = build_acm(selected, runs, m.failure, _load_policy(m.policy), meta)
        _write_acm(g, out / "acm.json", out / "acm.dot")
        return g

    g = stage("acm", acm)

    def disc():
        oracle = SimulatedOracle(model, seed=oracle_seed) if model is not None \
            else CommandOracle(shlex.split(m.oracle_command))
        rep = discover(g, oracle, m.strategy, seed=m.seed, repetitions=m.repetitions, predicates=meta)
        (out / "report.json").write_text(rep.to_json())
        return rep

    return stage("discover", disc)


# --- subcommands ------------------------------------------------------------


def cmd_extract(a) -> int:
    preds, runs = extract_predicates(load_traces(a.traces), _load_labels(a.labels),
                                     pure_methods=_split_list(a.pure_methods))
    if a.compounds:
        with open(a.compounds) as fh:
            preds, runs = add_compounds(preds, runs, json.load(fh))
    save_runs(a.out, runs)
    if a.predicates_out:
        save_predicates(a.predicates_out, preds)
    print(f"{len(preds)} predicates over {len(runs)} runs")
    return 0


def cmd_filter(a) -> int:
    runs = load_runs(a.logs)
    meta = {p.pred_id: p for p in load_predicates(a.predicates)} if a.predicates else None
    stats = compute_stats(runs)
    sel = fully_discriminative(stats, meta)
    write_stats_csv(a.out, stats, sel)
    if a.selected_out:
        Path(a.selected_out).write_text(json.dumps(sorted(sel), indent=2) + "\n")
    print(f"{len(sel)} of {len(stats)} predicates are fully discriminative")
    return 0


def cmd_acm(a) -> int:
    runs = load_runs(a.logs)
    meta = {p.pred_id: p for p in load_predicates(a.predicates)} if a.predicates else None
    if a.selected:
        selected = set(json.loads(Path(a.selected).read_text()))
    else:
        selected = fully_discriminative(compute_stats(runs), meta)
    g = build_acm(selected, runs, a.failure, _load_policy(a.policy), meta)
    _write_acm(g, Path(a.out), Path(a.dot) if a.dot else None)
    j, t = g.branching()
    print(f"ACM: {len(g.predicates)} predicates, {len(g.junctions)} junctions, "
          f"{j} splits (max {t} branches), longest path {g.longest_path()}")
    return 0


def cmd_discover(a) -> int:
    g = AcmGraph.from_dict(json.loads(Path(a.acm).read_text()))
    meta = {p.pred_id: p for p in load_predicates(a.predicates)} if a.predicates else None
    rep = discover(g, _make_oracle(a.oracle, a.seed), a.strategy, seed=a.seed,
                   repetitions=a.reps, predicates=meta, defectives=a.defectives)
    text = rep.to_json()
    if a.report:
        Path(a.report).write_text(text)
    if rep.found:
        print(" -> ".join(rep.causal_path) + f"  ({rep.n_interventions} interventions)")
        return 0
    print(rep.message, file=sys.stderr)
    return 1


def cmd_bench(a) -> int:
    if a.full_scale:
        cfg = BenchmarkConfig.full_scale()
    elif a.config:
        with open(a.config, "rb") as fh:
            cfg = BenchmarkConfig.from_dict(tomllib.load(fh))
    else:
        cfg = BenchmarkConfig()
    if a.seed is not None:
        cfg = BenchmarkConfig(**{**asdict(cfg), "seed": a.seed})
    results = run_instances(cfg)
    rows = aggregate(results)
    write_rows(a.out, rows)
    if a.instances_out:
        write_rows(a.instances_out, results)
    w = csv.writer(sys.stdout)
    w.writerow(["setting", "strategy", "mean", "max", "mean_n", "correct"])
    for r in rows:
        w.writerow([r.setting, r.strategy, f"{r.mean_interventions:.2f}", r.max_interventions,
                    f"{r.mean_n:.1f}", f"{r.correctness_rate:.2f}"])
    return 0


def cmd_theory(a) -> int:
    j, b, n = _ints(a.symmetric, 3, "--symmetric")
    d, s1, s2 = 1, 0, 0
    rows = []
    if a.bounds:
        big_n, d, s1, s2, t, n_m = _ints(a.bounds, 6, "--bounds")
        ub = upper_bounds(BoundInputs(big_n, d, s1, s2, j=j, t=t, n_m=n_m))
        for k in ("aid_branch", "tagt_branch", "pruning", "tagt"):
            rows.append(["bound", k, "", "", f"{ub[k]:.6f}"])
    table = symmetric_table(j, b, n, d, s1, s2)
    out = [["row", "method", "search_space", "lower_bound", "upper_bound"]]
    out += [["symmetric", r.method, r.search_space, f"{r.lower_bound:.6f}", f"{r.upper_bound:.6f}"]
            for r in table]
    out += rows
    csv.writer(sys.stdout).writerows(out)
    if a.csv:
        with open(a.csv, "w", newline="") as fh:
            csv.writer(fh).writerows(out)
    return 0


def cmd_oracle(a) -> int:
    if a.action == "serve":
        serve(GroundTruthModel.load(a.model))
    elif a.action == "golden":
        out = Path(a.out)
        out.mkdir(parents=True, exist_ok=True)
        model, g = golden_fixture_figure3()
        model.save(out / "model.json")
        _write_acm(g, out / "acm.json", out / "acm.dot")
        print(f"wrote {out}/model.json and {out}/acm.json")
    elif a.action == "observe":
        model = GroundTruthModel.load(a.model)
        save_runs(a.out, observe(model, a.success, a.failed, seed=a.seed))
    return 0


def cmd_run(a) -> int:
    m = StudyManifest.load(a.manifest)
    rep = run_pipeline(m)
    if rep.found:
        print(" -> ".join(rep.causal_path) + f"  ({rep.n_interventions} interventions, seed {m.seed})")
        return 0
    print(rep.message, file=sys.stderr)
    return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aid", description=__doc__)
    ap.add_argument("--version", action="version", version=f"aid {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("extract", help="evaluate predicates over method traces")
    p.add_argument("--traces", required=True)
    p.add_argument("--labels", required=True, help="JSON map or JSONL rows of run_id -> label")
    p.add_argument("--out", required=True, help="predicate log (JSONL)")
    p.add_argument("--predicates-out")
    p.add_argument("--pure-methods", help="comma-separated methods safe to alter")
    p.add_argument("--compounds", help="JSON map name -> list of conjunct ids")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("filter", help="select fully-discriminative predicates")
    p.add_argument("--logs", required=True)
    p.add_argument("--out", required=True, help="stats CSV")
    p.add_argument("--predicates")
    p.add_argument("--selected-out")
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("acm", help="build the approximate causal DAG")
    p.add_argument("--logs", required=True)
    p.add_argument("--out", required=True, help=".json, or .dot to also get the JSON alongside")
    p.add_argument("--dot")
    p.add_argument("--policy")
    p.add_argument("--selected")
    p.add_argument("--predicates")
    p.add_argument("--failure", default="F")
    p.set_defaults(fn=cmd_acm)

    p = sub.add_parser("discover", help="find the causal path by intervention")
    p.add_argument("--acm", required=True)
    p.add_argument("--oracle", required=True, help="model JSON file, or a command line")
    p.add_argument("--strategy", default="aid", choices=[s.value for s in Strategy])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--defectives", type=int, help="number of causes, if known (tagt only)")
    p.add_argument("--predicates")
    p.add_argument("--report")
    p.set_defaults(fn=cmd_discover)

    p = sub.add_parser("bench", help="synthetic strategy comparison")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--instances-out")
    p.add_argument("--seed", type=int)
    p.add_argument("--full-scale", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("theory", help="search-space sizes and bounds")
    p.add_argument("--symmetric", required=True, metavar="J,B,n")
    p.add_argument("--bounds", metavar="N,D,S1,S2,T,Nm")
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_theory)

    p = sub.add_parser("oracle", help="simulated system under test")
    osub = p.add_subparsers(dest="action", required=True)
    q = osub.add_parser("serve", help="answer one intervention request on stdin")
    q.add_argument("--model", required=True)
    q = osub.add_parser("golden", help="write the 11-predicate walkthrough fixture")
    q.add_argument("--out", required=True)
    q = osub.add_parser("observe", help="generate observational predicate logs")
    q.add_argument("--model", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--success", type=int, default=20)
    q.add_argument("--failed", type=int, default=20)
    q.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("run", help="whole pipeline from a TOML manifest")
    p.add_argument("manifest")
    p.set_defaults(fn=cmd_run)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.fn(a)
    except (StageError, ValueError, OSError, RuntimeError) as exc:
        print(f"aid {a.cmd}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
