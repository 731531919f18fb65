import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dnanas.cost import build_cost_table
from dnanas.distill import BlockDistiller
from dnanas.engine import ParameterSet, init_params
from dnanas.evaluate import (DegenerateTargetError, EvalRecord, EvalStats, MemoryCapError, PathRanking, dfs_evaluate,
                             naive_evaluate, rank_block, rankings_from_csv, rankings_to_csv, relative_l1)
from dnanas.space import BlockChoice, SupernetConfig, op_graph
from dnanas.teacher import FeatureCache

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(2, 30), elements=finite)


@given(vectors)
def test_rel_l1_zero_on_identity(y):
    if np.std(y) > 0:
        assert relative_l1(y, y) == 0.0


@given(vectors, st.data())
def test_rel_l1_positive_when_different(y, data):
    if not np.std(y) > 0:
        return
    x = y.copy()
    i = data.draw(st.integers(0, len(y) - 1))
    x[i] += data.draw(st.floats(0.5, 10.0))
    assert relative_l1(x, y) > 0


@given(vectors, st.integers(-20, 20))
def test_rel_l1_joint_scaling_invariant(y, e):
    if not np.std(y) > 1e-6:
        return
    x = y[::-1].copy()
    k = 2.0 ** e  # exact in binary floating point
    assert relative_l1(k * x, k * y) == relative_l1(x, y)


def test_rel_l1_value():
    y = np.array([0.0, 2.0])
    assert relative_l1(np.array([1.0, 1.0]), y) == 1.0
    assert relative_l1(np.array([1.0, 1.0]), y, sigma=2.0) == 0.5


def test_rel_l1_degenerate():
    with pytest.raises(DegenerateTargetError):
        relative_l1(np.ones(4), np.full(4, 3.0))
    with pytest.raises(DegenerateTargetError):
        relative_l1(np.ones(4), np.arange(4.0), sigma=0.0)
    with pytest.raises(ValueError):
        relative_l1(np.ones(3), np.ones(4))


def _cell(depth, n_ops, seed, width=3):
    cfg = SupernetConfig.build(teacher_widths=[width], strides=[1], cells=[[(depth, width)]],
                               ops=[(3, 3), (5, 3), (3, 6)][:n_ops], input_size=5, stem_width=width)
    graphs = [[op_graph(cfg, f"l{j}.o{o}", o, width, width, 1) for o in range(n_ops)] for j in range(depth)]
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    for per_op in graphs:
        for g in per_op:
            init_params(g, rng, params=params, dtype=np.float64)
    x = rng.standard_normal((7, width, 5, 5))
    y = rng.standard_normal((7, width, 5, 5))
    return graphs, params, x, y


@pytest.mark.parametrize("depth,n_ops", [(1, 2), (2, 3), (3, 2)])
def test_dfs_equals_naive_and_counts(depth, n_ops):
    graphs, params, x, y = _cell(depth, n_ops, depth * 10 + n_ops)
    s1, s2 = EvalStats(), EvalStats()
    fast = dfs_evaluate(graphs, params, x, y, batch_size=3, stats=s1)
    slow = naive_evaluate(graphs, params, x, y, batch_size=3, stats=s2)
    assert fast.keys() == slow.keys() and len(fast) == n_ops ** depth
    for p in fast:
        assert fast[p] == pytest.approx(slow[p], rel=1e-12)
    assert s1.batches == 3
    assert s1.forward_calls == 3 * sum(n_ops ** k for k in range(1, depth + 1))
    assert s2.forward_calls == 3 * depth * n_ops ** depth


def test_dfs_batch_size_invariant():
    graphs, params, x, y = _cell(2, 2, 0)
    a = dfs_evaluate(graphs, params, x, y, batch_size=7)
    b = dfs_evaluate(graphs, params, x, y, batch_size=2)
    for p in a:
        assert a[p] == pytest.approx(b[p], rel=1e-12)


def test_memory_cap():
    graphs, params, x, y = _cell(2, 2, 0)
    with pytest.raises(MemoryCapError):
        dfs_evaluate(graphs, params, x, y, batch_size=7, memory_cap_bytes=100)
    dfs_evaluate(graphs, params, x, y, batch_size=7, memory_cap_bytes=1e9)


def test_ranking_sorted_with_tie_break():
    recs = [EvalRecord(0, 1, (0,), 0.5, 10, 5), EvalRecord(0, 0, (1,), 0.5, 10, 5), EvalRecord(0, 0, (0,), 0.5, 9, 9),
            EvalRecord(0, 0, (2,), 0.1, 99, 99)]
    rk = PathRanking(0, recs)
    assert [(r.cell, r.path) for r in rk] == [(0, (2,)), (0, (0,)), (0, (1,)), (1, (0,))]
    assert rk.loss_of(BlockChoice(1, (0,))) == 0.5
    with pytest.raises(KeyError):
        rk.loss_of(BlockChoice(1, (1,)))
    with pytest.raises(ValueError):
        PathRanking(1, recs)


def test_rank_block_and_csv_roundtrip(tiny_space, rng):
    ys = [rng.standard_normal((10, 4, 8, 8)).astype(np.float32), rng.standard_normal((10, 4, 4, 4)).astype(np.float32)]
    cache = FeatureCache({"train": ys, "val": ys})
    d = BlockDistiller(tiny_space, 0, epochs=1, batch_size=5).fit(ys[0], ys[1])
    table = build_cost_table(tiny_space)
    rk = rank_block(d, cache, table, batch_size=4)
    assert len(rk) == 6
    losses = [r.loss for r in rk]
    assert losses == sorted(losses)
    for r in rk:
        direct = relative_l1(d.predict(ys[0], r.choice), ys[1], sigma=cache.sigma("val", 1))
        assert r.loss == pytest.approx(direct, rel=1e-6)
        assert (r.params, r.madds) == (table.choice_cost(0, r.choice).params, table.choice_cost(0, r.choice).madds)
    text = rankings_to_csv([rk])
    back = rankings_from_csv(text)
    assert back[0].records == rk.records
    assert rankings_to_csv(back) == text


def test_rank_block_degenerate_target(tiny_space, rng):
    y0 = rng.standard_normal((4, 4, 8, 8)).astype(np.float32)
    y1 = np.zeros((4, 4, 4, 4), np.float32)
    cache = FeatureCache({"val": [y0, y1]})
    d = BlockDistiller(tiny_space, 0, epochs=0).fit(y0, y1 + rng.standard_normal(y1.shape).astype(np.float32))
    with pytest.raises(DegenerateTargetError):
        rank_block(d, cache)
