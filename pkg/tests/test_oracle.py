import io
import itertools
import json
import sys

import numpy as np
import pytest

from aid.acm import AcmGraph, build_acm
from aid.oracle import (CommandOracle, GroundTruthModel, ModelError, OracleError, SimulatedOracle,
                        covering_linear_extensions, golden_fixture_figure3, observe,
                        random_linear_extension, serve, simulate)
from aid.sd_filter import compute_stats, fully_discriminative


@pytest.fixture
def golden():
    return golden_fixture_figure3()[0]


def test_intervening_on_root_stops_everything(golden):
    runs = simulate(golden, {"P1"}, 3)
    assert all(not r.failed for r in runs)
    assert all("P2" not in r and "P11" not in r for r in runs)


def test_no_intervention_fails(golden):
    runs = simulate(golden, (), 4)
    assert all(r.failed for r in runs)
    assert all(set(golden.predicates) <= set(r.observations) for r in runs)


def test_correlated_predicate_leaves_failure(golden):
    assert "P7" in golden.correlated_predicates
    runs = simulate(golden, {"P7"}, 2)
    assert all(r.failed and "P7" not in r for r in runs)
    assert all("P8" not in r and "P9" not in r for r in runs)


def test_simulate_is_pure(golden):
    a = [r.to_dict() for r in simulate(golden, {"P3"}, 3, seed=7)]
    b = [r.to_dict() for r in simulate(golden, {"P3"}, 3, seed=7)]
    assert a == b


def test_simulate_rejects_bad_requests(golden):
    with pytest.raises(ValueError):
        simulate(golden, (), 0)
    with pytest.raises(ModelError):
        simulate(golden, {"nope"}, 1)


def test_runs_respect_precedence(golden):
    g = golden.precedence_graph
    for r in simulate(golden, (), 5, seed=2):
        obs = r.observations
        for a, b in itertools.permutations(obs, 2):
            if g.reaches(a, b):
                assert obs[a].t_end <= obs[b].t_start


@pytest.mark.parametrize("kwargs, msg", [
    (dict(causal_path=("A",)), "at least"),
    (dict(parents={"A": "B", "B": None}), "root cause"),
    (dict(parents={"A": None, "B": "Z"}), "unknown parent"),
    (dict(precedence=(("B", "A"), ("A", "F"), ("B", "F"))), "precede"),
    (dict(noise={"A": 0.5}), "collide"),
    (dict(noise={"N": 1.5}), "outside"),
])
def test_model_validation(kwargs, msg):
    base = dict(failure="F", causal_path=("A", "F"), parents={"A": None, "B": "A"},
                precedence=(("A", "B"), ("B", "F"), ("A", "F")))
    with pytest.raises(ModelError, match=msg):
        GroundTruthModel(**{**base, **kwargs})


def test_parent_cycle_is_rejected():
    with pytest.raises(ModelError, match="cycle"):
        GroundTruthModel("F", ("A", "F"), {"A": None, "B": "C", "C": "B"},
                         (("A", "F"), ("B", "C"), ("C", "B")))


def test_json_roundtrip(tmp_path, golden):
    golden.save(tmp_path / "m.json")
    back = GroundTruthModel.load(tmp_path / "m.json")
    assert back.to_dict() == golden.to_dict()
    assert back.fires(()) == golden.fires(())


def test_covering_extensions_flip_every_unordered_pair(golden):
    g = golden.precedence_graph
    exts = covering_linear_extensions(g)
    for a, b in itertools.combinations(g.predicates, 2):
        if g.reaches(a, b) or g.reaches(b, a):
            continue
        seen = {ext.index(a) < ext.index(b) for ext in exts}
        assert seen == {True, False}, (a, b)


def test_random_extension_is_topological(golden):
    g = golden.precedence_graph
    ext = random_linear_extension(g, np.random.default_rng(1))
    pos = {p: i for i, p in enumerate(ext)}
    assert all(pos[a] < pos[b] for a, b in itertools.permutations(pos, 2) if g.reaches(a, b))


def test_observed_acm_matches_precedence_closure(golden):
    runs = observe(golden, 10, 10, seed=3)
    g = build_acm(fully_discriminative(compute_stats(runs)), runs, "F")
    truth = golden.precedence_graph
    for a, b in itertools.permutations(truth.nodes, 2):
        assert g.reaches(a, b) == truth.reaches(a, b), (a, b)


def test_observe_with_noise_keeps_noise_out_of_selection():
    model = GroundTruthModel("F", ("A", "F"), {"A": None}, (("A", "F"),), noise={"N": 0.5})
    runs = observe(model, 20, 20, seed=0)
    assert fully_discriminative(compute_stats(runs)) == {"A", "F"}


def test_simulated_oracle_varies_by_call(golden):
    o = SimulatedOracle(golden, seed=1)
    a = o.intervene(frozenset({"P4"}), 1)
    b = o.intervene(frozenset({"P4"}), 1)
    assert a[0].run_id != b[0].run_id


def test_serve_protocol(golden):
    out = io.StringIO()
    serve(golden, io.StringIO(json.dumps({"intervene": ["P2"], "repetitions": 2, "seed": 0})), out)
    rows = [json.loads(l) for l in out.getvalue().splitlines()]
    assert len(rows) == 2
    assert all(r["label"] == "Success" for r in rows)


def test_command_oracle_end_to_end(tmp_path, golden):
    golden.save(tmp_path / "m.json")
    cmd = [sys.executable, "-m", "aid.cli", "oracle", "serve", "--model", str(tmp_path / "m.json")]
    runs = CommandOracle(cmd, timeout=60).intervene(frozenset({"P11"}), 2)
    assert len(runs) == 2 and not any(r.failed for r in runs)


def test_command_oracle_failures_are_oracle_errors(tmp_path):
    with pytest.raises(OracleError):
        CommandOracle([sys.executable, "-c", "import sys; sys.exit(3)"]).intervene(frozenset({"A"}), 1)
    with pytest.raises(OracleError):
        CommandOracle([sys.executable, "-c", "print('not json')"]).intervene(frozenset({"A"}), 1)
    with pytest.raises(OracleError):
        CommandOracle([str(tmp_path / "missing")]).intervene(frozenset({"A"}), 1)


def test_golden_structure():
    model, g = golden_fixture_figure3()
    assert isinstance(g, AcmGraph)
    assert model.causal_path == ("P1", "P2", "P11", "F")
    assert len(g.predicates) == 11
    assert g.longest_path() == 7
