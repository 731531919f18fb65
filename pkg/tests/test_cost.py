import pytest
from hypothesis import given, settings, strategies as st

from dnanas.cost import (ZERO, Cost, CostTable, assembled_cost, build_cost_table, costs_by_choice, count_graph,
                         model_cost, op_cost)
from dnanas.engine import Graph, INPUT
from dnanas.space import (ArchEncoding, InvalidEncodingError, OpSpec, add_mbconv, decode_index, desk_config,
                          enumerate_space, space_size)


def test_cost_arithmetic():
    a, b = Cost(3, 10), Cost(1, 4)
    assert a + b == Cost(4, 14) and a - b == Cost(2, 6)
    assert a.metric("params") == 3 and a.metric("madds") == 10
    assert a + ZERO == a
    with pytest.raises(ValueError):
        a.metric("flops")


def test_op_cost_hand_count():
    # k3 e3, 2 -> 2 channels, 4x4, stride 1: mid 6, se 1
    c = op_cost(OpSpec(3, 3), 2, 2, 4, 1)
    assert c.params == 2 * 6 + 9 * 6 + 2 * 6 * 1 + 6 * 2 + 2 * 6 + 2 * 6 + 2 * 2
    expand, dw, project = 16 * 2 * 6, 16 * 6 * 9, 16 * 6 * 2
    acts = 16 * 6 * 2
    se = 16 * 6 + 6 + 1 + 6 + 6 + 16 * 6
    assert c.madds == expand + dw + project + acts + se + 16 * 2


@pytest.mark.parametrize("stride,cin,cout", [(1, 4, 4), (2, 4, 4), (1, 3, 5), (2, 6, 2)])
@pytest.mark.parametrize("op", [OpSpec(3, 3), OpSpec(5, 6), OpSpec(7, 3)])
def test_op_cost_matches_graph_count(op, stride, cin, cout):
    g = Graph()
    add_mbconv(g, INPUT, "x", op, cin, cout, stride)
    assert op_cost(op, cin, cout, 7, stride) == count_graph(g, (1, cin, 7, 7))


def test_model_cost_matches_graph_exhaustive(tiny_space):
    table = build_cost_table(tiny_space)
    for arch in enumerate_space(tiny_space):
        assert model_cost(table, arch) == assembled_cost(tiny_space, arch)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, space_size(desk_config(input_size=16)) - 1))
def test_model_cost_matches_graph_desk(idx):
    cfg = desk_config(input_size=16)
    arch = decode_index(cfg, idx)
    assert model_cost(build_cost_table(cfg), arch) == assembled_cost(cfg, arch)


def test_model_cost_is_additive_over_blocks(tiny_space):
    table = build_cost_table(tiny_space)
    arch = ArchEncoding.of((1, [1, 0]), (0, [0, 1]))
    total = table.stem + table.head + table.choice_cost(0, arch[0]) + table.choice_cost(1, arch[1])
    assert model_cost(table, arch) == total


def test_costs_by_choice_covers_block(tiny_space):
    table = build_cost_table(tiny_space)
    by = costs_by_choice(table, tiny_space, 0)
    assert len(by) == 6


def test_missing_entry_raises(tiny_space):
    table = build_cost_table(tiny_space)
    with pytest.raises(InvalidEncodingError):
        model_cost(table, ArchEncoding.of((0, [5]), (0, [0, 0])))


def test_csv_roundtrip(tiny_space):
    table = build_cost_table(tiny_space, "abc123")
    text = table.to_csv()
    assert text.startswith("# config_hash=abc123")
    back = CostTable.from_csv(text)
    assert back == table
