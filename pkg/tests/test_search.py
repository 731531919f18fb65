import json

import pytest
from hypothesis import given, settings, strategies as st

from dnanas.cost import build_cost_table
from dnanas.evaluate import EvalRecord, PathRanking
from dnanas.search import (Constraint, NoFeasibleModel, SearchResult, arch_loss, brute_force_search, pareto_sweep,
                           traversal_search)
from dnanas.space import ArchEncoding, block_choices

from helpers import random_instance


def _pools():
    b1 = PathRanking(0, [EvalRecord(0, 0, (0,), 0.1, 5, 5), EvalRecord(0, 0, (1,), 0.2, 3, 3)])
    b2 = PathRanking(1, [EvalRecord(1, 0, (0,), 0.1, 4, 4), EvalRecord(1, 0, (1,), 0.3, 1, 1)])
    return [b1, b2]


def test_two_block_example():
    r = traversal_search(_pools(), None, Constraint("madds", 8))
    assert r.arch == ArchEncoding.of((0, [1]), (0, [0]))
    assert r.loss == pytest.approx(0.3) and r.cost.madds == 7
    assert r.proof == "exact"


def test_infeasible_bound():
    with pytest.raises(NoFeasibleModel):
        traversal_search(_pools(), None, Constraint("madds", 3))
    with pytest.raises(NoFeasibleModel):
        brute_force_search(_pools(), None, Constraint("madds", 3))


def test_unconstrained_picks_min_loss():
    r = traversal_search(_pools())
    assert r.arch == ArchEncoding.of((0, [0]), (0, [0]))
    assert r.loss == pytest.approx(0.2)


def test_constraint_validation():
    with pytest.raises(ValueError):
        Constraint("flops", 10)
    with pytest.raises(ValueError):
        Constraint("params", 0)
    assert not Constraint("params", float("inf")).active


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31))
def test_traversal_matches_brute_force(seed):
    rankings, con = random_instance(seed)
    try:
        expected = brute_force_search(rankings, None, con)
    except NoFeasibleModel:
        with pytest.raises(NoFeasibleModel):
            traversal_search(rankings, None, con)
        return
    got = traversal_search(rankings, None, con)
    assert got.loss == expected.loss
    assert got.arch == expected.arch
    assert got.cost == expected.cost
    assert got.visited <= expected.visited


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.floats(0.5, 3.0), min_size=4, max_size=4))
def test_weighted_search_matches_brute_force(seed, lam):
    rankings, con = random_instance(seed, max_blocks=4, max_entries=12)
    lam = lam[:len(rankings)]
    try:
        expected = brute_force_search(rankings, None, con, lam)
    except NoFeasibleModel:
        return
    got = traversal_search(rankings, None, con, lam)
    assert (got.loss, got.arch) == (expected.loss, expected.arch)
    assert arch_loss(rankings, got.arch, lam) == got.loss


def test_result_within_bound_and_includes_fixed_cost(tiny_space):
    table = build_cost_table(tiny_space)
    recs = []
    for b in range(2):
        rs = []
        for k, ch in enumerate(block_choices(tiny_space, b)):
            c = table.choice_cost(b, ch)
            rs.append(EvalRecord(b, ch.cell, ch.ops, 1.0 / (k + 1), c.params, c.madds))
        recs.append(PathRanking(b, rs))
    free = traversal_search(recs, table)
    bound = free.cost.madds - 1
    r = traversal_search(recs, table, Constraint("madds", bound))
    assert r.cost.madds <= bound
    assert r.cost.madds >= table.stem.madds + table.head.madds
    oracle = brute_force_search(recs, table, Constraint("madds", bound))
    assert (r.arch, r.loss, r.cost) == (oracle.arch, oracle.loss, oracle.cost)
    assert r.loss >= free.loss


def test_pareto_monotone_and_duplicates():
    rankings, _ = random_instance(11, max_blocks=3, max_entries=20)
    lo = sum(min(r.madds for r in rk) for rk in rankings)
    bounds = [lo, lo + 5, lo + 5, lo + 20, float("inf")]
    res = pareto_sweep(rankings, None, bounds, "madds")
    losses = [r.loss for r in res]
    assert all(a >= b for a, b in zip(losses, losses[1:]))
    assert res[1] == res[2]
    assert res[-1].loss == traversal_search(rankings).loss
    with pytest.raises(ValueError):
        pareto_sweep(rankings, None, [10, 5])


def test_bad_weights_and_empty():
    with pytest.raises(ValueError):
        traversal_search(_pools(), lam=[1.0])
    with pytest.raises(ValueError):
        traversal_search(_pools(), lam=[1.0, 0.0])
    with pytest.raises(ValueError):
        traversal_search([])


def test_result_json():
    r = traversal_search(_pools(), None, Constraint("madds", 8))
    d = json.loads(r.to_json("madds"))
    assert d["metric"] == "madds" and d["madds"] == 7
    assert ArchEncoding.from_dict(d) == r.arch
    assert isinstance(r, SearchResult)
