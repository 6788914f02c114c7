import csv

import numpy as np
import pytest

from aid.acm import AcmGraph
from aid.bench import (BenchmarkConfig, aggregate, generate_instance, max_defectives, run_experiment,
                       run_instances, series_parallel_dag)
from aid.theory import search_space_cpd

SMALL = BenchmarkConfig(max_threads=(2, 4), instances=6, n_min=4, n_max=40)


def test_max_defectives():
    assert max_defectives(16) == 4
    assert max_defectives(4) == 2
    assert max_defectives(2) == 2
    assert max_defectives(284) == 34


@pytest.mark.parametrize("threads", [2, 3, 7])
def test_split_width_is_capped(threads):
    rng = np.random.default_rng(threads)
    for _ in range(20):
        nodes, edges = series_parallel_dag(int(rng.integers(2, 60)), threads, rng)
        g = AcmGraph.from_edges([*nodes, "F"], edges, "F")
        _, t = g.branching()
        assert t <= threads


def test_generated_dag_is_series_parallel():
    rng = np.random.default_rng(0)
    nodes, edges = series_parallel_dag(14, 3, rng)
    g = AcmGraph.from_edges([*nodes, "F"], edges, "F")
    assert 1 <= search_space_cpd(g) <= 2**14
    assert all(g.reaches(p, "F") for p in nodes)


def test_instance_is_deterministic():
    a, _ = generate_instance(5, 123, n_range=(4, 50))
    b, _ = generate_instance(5, 123, n_range=(4, 50))
    assert a.to_dict() == b.to_dict()


def test_defectives_in_range():
    for seed in range(40):
        model, g = generate_instance(3, seed, n_range=(16, 16))
        d = len(model.causal_path) - 1
        assert len(g.predicates) == 16
        assert 1 <= d <= 4


def test_contiguous_causal_path_is_a_precedence_chain():
    for seed in range(20):
        model, g = generate_instance(4, seed, n_range=(4, 60))
        path = model.causal_path
        for a, b in zip(path, path[1:]):
            assert b in g.descendants(a)


def test_bad_generator_arguments():
    with pytest.raises(ValueError):
        generate_instance(1, 0)
    with pytest.raises(ValueError):
        generate_instance(2, 0, n_range=(10, 5))


def test_config_validation():
    with pytest.raises(ValueError, match="unknown"):
        BenchmarkConfig.from_dict({"instances": 3, "threads": [2]})
    with pytest.raises(ValueError):
        BenchmarkConfig(instances=0)
    with pytest.raises(ValueError):
        BenchmarkConfig(max_threads=(1,))
    cfg = BenchmarkConfig.from_dict({"max_threads": [3, 6], "instances": 2})
    assert cfg.max_threads == (3, 6)


def test_small_run_is_correct_and_repeatable():
    a = run_instances(SMALL)
    b = run_instances(SMALL)
    assert a == b
    assert len(a) == 2 * 6 * 4 and all(r.correct for r in a)


def test_aggregate_and_csv(tmp_path):
    rows = run_experiment(SMALL, tmp_path / "rows.csv")
    assert [(r.setting, r.strategy) for r in rows[:4]] == [(2, "aid"), (2, "aid-p"), (2, "aid-p-b"), (2, "tagt")]
    with open(tmp_path / "rows.csv") as fh:
        back = list(csv.DictReader(fh))
    assert len(back) == 8
    assert float(back[0]["correctness_rate"]) == 1.0
    assert aggregate(run_instances(SMALL))[0] == rows[0]
