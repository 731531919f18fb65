import numpy as np
import pytest
from scipy import stats

from dnanas.data import gen_synthetic
from dnanas.distill import (BlockDistiller, SPOSSupernet, StrategyError, block_layer_graphs, sample_path,
                            train_block_sequential)
from dnanas.space import ArchEncoding, CellSpec, SupernetConfig, sample_architectures


@pytest.fixture
def feats(tiny_space, rng):
    y0 = rng.standard_normal((16, 4, 8, 8)).astype(np.float32)
    y1 = rng.standard_normal((16, 4, 4, 4)).astype(np.float32)
    y2 = rng.standard_normal((16, 6, 4, 4)).astype(np.float32)
    return [y0, y1, y2]


def test_sample_path_uniform_chi_square():
    rng = np.random.default_rng(0)
    n = 6000
    counts = np.zeros((3, 4))
    for _ in range(n):
        for j, o in enumerate(sample_path(CellSpec(3, 4), 4, rng)):
            counts[j, o] += 1
    for row in counts:
        assert stats.chisquare(row).pvalue > 1e-3
    joint = {}
    rng = np.random.default_rng(1)
    for _ in range(n):
        p = sample_path(CellSpec(2, 3), 3, rng)
        joint[p] = joint.get(p, 0) + 1
    assert len(joint) == 9
    assert stats.chisquare(list(joint.values())).pvalue > 1e-3


def test_layer_graph_widths(tiny_space):
    g = block_layer_graphs(tiny_space, 0)
    assert len(g) == 2 and len(g[1]) == 2 and len(g[1][0]) == tiny_space.n_ops
    # the last layer of every cell emits the teacher width
    assert g[1][1][0].infer_shapes((1, 3, 4, 4))[-1] == (1, 4, 4, 4)
    assert g[1][0][0].infer_shapes((1, 4, 8, 8))[-1] == (1, 3, 4, 4)


def test_identity_target_is_learned():
    sp = SupernetConfig.build(teacher_widths=[4], strides=[1], cells=[[(1, 4)]], ops=[(3, 3)], input_size=6,
                              stem_width=4, num_classes=2)
    Y = np.random.default_rng(0).standard_normal((64, 4, 6, 6)).astype(np.float32)
    d = BlockDistiller(sp, 0, epochs=30, batch_size=16, lr=0.01, lr_decay=1.0).fit(Y, Y)
    m = d.epoch_means()
    assert m[-1] < 1e-3 * m[0]


def test_round_robin_cells(tiny_space, feats):
    d = BlockDistiller(tiny_space, 0, epochs=2, batch_size=4).fit(feats[0], feats[1])
    assert [row[2] for row in d.loss_curve_] == [s % 2 for s in range(8)]
    assert d.n_steps_ == 8


def test_unsampled_ops_untouched(tiny_space, feats):
    d = BlockDistiller(tiny_space, 1, epochs=1, batch_size=16, seed=5).fit(feats[1], feats[2])
    fresh = BlockDistiller(tiny_space, 1, epochs=0, batch_size=16, seed=5).fit(feats[1], feats[2])
    moved = {n.split(".")[3] for n in d.params_ if not np.array_equal(d.params_[n], fresh.params_[n])}
    # a single step trains exactly one op per layer
    assert len(moved) == 1


def test_block_independent_of_other_blocks(tiny_space, feats):
    a = BlockDistiller(tiny_space, 1, epochs=1, batch_size=8).fit(feats[1], feats[2])
    BlockDistiller(tiny_space, 0, epochs=1, batch_size=8).fit(feats[0], feats[1])
    b = BlockDistiller(tiny_space, 1, epochs=1, batch_size=8).fit(feats[1], feats[2])
    for n in a.params_:
        np.testing.assert_array_equal(a.params_[n], b.params_[n])


def test_shape_mismatch_rejected(tiny_space, feats):
    with pytest.raises(ValueError):
        BlockDistiller(tiny_space, 1).fit(feats[0], feats[2])


def test_save_load_predict(tmp_path, tiny_space, feats):
    d = BlockDistiller(tiny_space, 0, epochs=1, batch_size=8).fit(feats[0], feats[1])
    d.save(tmp_path / "b.bin")
    e = BlockDistiller.load(tmp_path / "b.bin")
    ch = ArchEncoding.of((1, [1, 0]))[0]
    np.testing.assert_array_equal(d.predict(feats[0], ch), e.predict(feats[0], ch))
    assert e.loss_curve_ == d.loss_curve_
    d.save(tmp_path / "c.bin")
    assert (tmp_path / "b.bin").read_bytes() == (tmp_path / "c.bin").read_bytes()


@pytest.mark.parametrize("strategy", ["s1", "s2"])
def test_sequential_strategies_run(tiny_space, feats, strategy):
    ds = train_block_sequential(tiny_space, feats[0], feats[1:], strategy, epochs=1, batch_size=8)
    assert [d.block for d in ds] == [0, 1]
    assert all(np.isfinite(d.epoch_means()).all() for d in ds)


def test_sequential_rejects_dna_and_bad_order(tiny_space, feats):
    with pytest.raises(StrategyError):
        train_block_sequential(tiny_space, feats[0], feats[1:], "dna")
    with pytest.raises(StrategyError):
        train_block_sequential(tiny_space, feats[0], feats[1:], "s2", blocks=[1])


def test_s2_freezes_earlier_blocks(tiny_space, feats):
    one = train_block_sequential(tiny_space, feats[0], feats[1:], "s2", epochs=1, batch_size=8, blocks=[0])
    two = train_block_sequential(tiny_space, feats[0], feats[1:], "s2", epochs=1, batch_size=8)
    for n in one[0].params_:
        np.testing.assert_array_equal(one[0].params_[n], two[0].params_[n])


def test_spos_fit_score_and_roundtrip(tmp_path, tiny_space):
    ds = gen_synthetic(0, 3, 8, size=8, noise=0.3)
    s = SPOSSupernet(tiny_space, epochs=2, batch_size=8).fit(ds.images, ds.labels)
    arch = sample_architectures(tiny_space, 1, 0)[0]
    before = {n: s.params_[n].copy() for n in s.params_}
    acc = s.score_arch(arch, ds.images, ds.labels)
    assert 0.0 <= acc <= 1.0
    for n, v in before.items():  # recalibration works on a copy
        np.testing.assert_array_equal(s.params_[n], v)
    s.save(tmp_path / "s.bin")
    assert SPOSSupernet.load(tmp_path / "s.bin").score_arch(arch, ds.images, ds.labels) == acc
