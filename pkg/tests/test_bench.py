import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnanas.bench import (CorrelationError, RankTrial, StandaloneClassifier, correlation_summary, dna_score,
                          rank_correlation, report_text, summary_csv, trial_seed, trials_from_csv, trials_to_csv)
from dnanas.data import gen_synthetic
from dnanas.evaluate import EvalRecord, PathRanking
from dnanas.space import ArchEncoding

from helpers import tau_b_pairs


def test_perfect_and_reversed():
    assert rank_correlation([1, 2, 3, 4], [10, 20, 30, 40]) == {"kendall_tau": 1.0, "spearman_rho": 1.0}
    r = rank_correlation([1, 2, 3, 4], [4, 3, 2, 1])
    assert r["kendall_tau"] == pytest.approx(-1.0, abs=1e-12)
    assert r["spearman_rho"] == pytest.approx(-1.0, abs=1e-12)


def test_one_swap():
    assert rank_correlation([1, 2, 3, 4], [1, 2, 4, 3])["kendall_tau"] == pytest.approx(2 / 3, abs=1e-12)
    assert tau_b_pairs([1, 2, 3, 4], [1, 2, 4, 3]) == pytest.approx(2 / 3, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=3, max_size=25))
def test_tau_matches_pair_counting(pairs):
    x, y = map(np.array, zip(*pairs))
    if np.all(x == x[0]) or np.all(y == y[0]):
        with pytest.raises(CorrelationError):
            rank_correlation(x, y)
        return
    assert rank_correlation(x, y)["kendall_tau"] == pytest.approx(tau_b_pairs(x, y), abs=1e-12)


@pytest.mark.parametrize("x,y", [([1, 2], [1, 2]), ([1, 1, 1], [1, 2, 3]), ([1, np.nan, 2], [1, 2, 3]),
                                 ([1, 2, 3], [1, 2])])
def test_correlation_errors(x, y):
    with pytest.raises(CorrelationError):
        rank_correlation(x, y)


def test_trial_seed_order_free():
    seeds = [trial_seed(0, i) for i in range(16)]
    assert len(set(seeds)) == 16
    assert seeds[::-1] == [trial_seed(0, i) for i in reversed(range(16))]
    assert trial_seed(1, 0) != trial_seed(0, 0)


def test_dna_score_negates_loss_sum():
    rks = [PathRanking(0, [EvalRecord(0, 0, (0,), 0.25)]), PathRanking(1, [EvalRecord(1, 1, (1, 0), 0.5)])]
    assert dna_score(rks, ArchEncoding.of((0, [0]), (1, [1, 0]))) == -0.75


def test_trials_csv_and_report():
    trials = [RankTrial(ArchEncoding.of((0, [i % 2]), (1, [0, 1])), -0.1 * i, 0.3 + 0.01 * i, 0.5 + 0.02 * (i % 3), i)
              for i in range(5)]
    text = trials_to_csv(trials)
    assert text.splitlines()[0] == "arch_id,encoding,dna_score,spos_score,true_acc,seed"
    assert trials_from_csv(text) == trials
    summary = correlation_summary(trials)
    assert set(summary) == {"dna", "spos"}
    assert summary_csv(summary).splitlines()[0] == "predictor,kendall_tau,spearman_rho"
    rep = report_text(trials, summary)
    assert "dna: kendall_tau=" in rep and "spos: kendall_tau=" in rep


def test_standalone_classifier(tiny_space):
    tr = gen_synthetic(0, 3, 10, size=8, noise=0.3)
    te = gen_synthetic(0, 3, 5, size=8, noise=0.3, split="test")
    arch = "c1:0-1|c0:1-1"
    clf = StandaloneClassifier(tiny_space, arch, epochs=3, batch_size=8, seed=2)
    clf.fit(tr.images, tr.labels, eval_set=(te.images, te.labels))
    assert len(clf.eval_curve_) == 4
    assert clf.best_accuracy_ == max(clf.eval_curve_)
    assert clf.predict(te.images).shape == (15,)
    again = StandaloneClassifier(tiny_space, ArchEncoding.from_key(arch), epochs=3, batch_size=8, seed=2)
    again.fit(tr.images, tr.labels, eval_set=(te.images, te.labels))
    assert again.eval_curve_ == clf.eval_curve_
    assert clf.get_params()["epochs"] == 3
