import math
from types import SimpleNamespace

import pytest

from aid.acm import AcmGraph
from aid.oracle import golden_fixture_figure3
from aid.theory import (BoundInputs, NotSeriesParallel, brute_force_search_space,
                        empirical_bound_check, lower_bound_cpd, lower_bound_gt, search_space_cpd,
                        search_space_gt, search_space_symmetric, sp_decompose, symmetric_acm,
                        symmetric_table, upper_bound_aid_branch, upper_bound_pruning,
                        upper_bound_tagt, upper_bounds)


def chain(k):
    names = [f"C{i}" for i in range(k)]
    edges = list(zip(names, names[1:])) + [(names[-1], "F")]
    return AcmGraph.from_edges([*names, "F"], edges, "F")


@pytest.mark.parametrize("k", [1, 2, 5, 9])
def test_chain_admits_every_subset(k):
    assert search_space_cpd(chain(k)) == 2**k == search_space_gt(k)


def test_antichain_admits_singletons_only():
    g = AcmGraph.from_edges(["A", "B", "C", "F"], [("A", "F"), ("B", "F"), ("C", "F")], "F")
    assert search_space_cpd(g) == 4


@pytest.mark.parametrize("j, b, n, expected", [(1, 2, 3, 15), (2, 2, 2, 49), (3, 2, 1, 27), (1, 1, 4, 16)])
def test_symmetric_formula(j, b, n, expected):
    assert search_space_symmetric(j, b, n) == expected
    g = symmetric_acm(j, b, n)
    assert search_space_cpd(g) == expected
    assert brute_force_search_space(g) == expected


@pytest.mark.parametrize("j, b, n", [(1, 2, 3), (2, 3, 1), (2, 2, 2)])
def test_cpd_never_exceeds_gt(j, b, n):
    g = symmetric_acm(j, b, n)
    assert search_space_cpd(g) < 2 ** len(g.predicates)


def test_n_shaped_order_is_not_series_parallel():
    g = AcmGraph.from_edges(["A", "B", "C", "D", "F"],
                            [("A", "C"), ("B", "C"), ("B", "D"), ("C", "F"), ("D", "F")], "F")
    with pytest.raises(NotSeriesParallel):
        sp_decompose(g)
    assert brute_force_search_space(g) == 1 + 4 + 3


def test_golden_fixture_needs_enumeration():
    _, g = golden_fixture_figure3()
    with pytest.raises(NotSeriesParallel):
        search_space_cpd(g)
    assert brute_force_search_space(g) == 224


def test_enumeration_limit():
    with pytest.raises(ValueError):
        brute_force_search_space(chain(25))


def test_bound_values():
    assert lower_bound_gt(6, 2) == pytest.approx(math.log2(15))
    assert lower_bound_cpd(10, 1, 0) == pytest.approx(math.log2(10))
    assert lower_bound_cpd(10, 2, 5) == pytest.approx(0.5 * math.log2(45))
    assert upper_bound_tagt(16, 2) == 8
    assert upper_bound_pruning(16, 2, 4) == pytest.approx(8 - 0.25)
    assert upper_bound_aid_branch(2, 4, 1, 8) == pytest.approx(7)


def test_bound_input_checks():
    with pytest.raises(ValueError):
        lower_bound_gt(3, 4)
    with pytest.raises(ValueError):
        lower_bound_cpd(10, 1, -1)
    with pytest.raises(ValueError):
        BoundInputs(10, 2, t=0)


def test_branch_bound_beats_tagt_exactly_when_fewer_junctions_than_causes():
    for j in range(0, 5):
        for d in range(1, 5):
            ub = upper_bounds(BoundInputs(40, d, j=j, t=4, n_m=10))
            assert ub["aid_branch_smaller"] == (j < d)


def test_symmetric_table_rows():
    cpd, gt = symmetric_table(1, 2, 3, 1)
    assert (cpd.search_space, gt.search_space) == (15, 64)
    assert cpd.lower_bound == pytest.approx(math.log2(6))
    assert gt.lower_bound == pytest.approx(math.log2(6))
    assert cpd.upper_bound == pytest.approx(1 + math.log2(3))


def test_empirical_bound_check():
    def r(strategy, k, **kw):
        base = dict(setting=2, instance=0, n=16, d=1, j=1, t=2, n_m=8)
        return SimpleNamespace(strategy=strategy, interventions=k, **{**base, **kw})

    check = empirical_bound_check([r("tagt", 5), r("aid", 5), r("aid-p", 99)])
    assert check.ok and check.checked == 2
    check = empirical_bound_check([r("tagt", 6), r("aid", 6)])
    assert [v.strategy for v in check.violations] == ["tagt", "aid"]
