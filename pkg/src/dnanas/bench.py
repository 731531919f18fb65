"""Ranking fidelity: retrain sampled architectures and correlate with predicted scores."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import _validation
from .distill import SPOSSupernet
from .engine import OptimizerConfig, init_params
from .evaluate import PathRanking
from .search import arch_loss
from .space import ArchEncoding, SupernetConfig, assemble_standalone, desk_config, validate_encoding
from .training import accuracy, fit_classifier, predict_logits

log = logging.getLogger(__name__)


class CorrelationError(ValueError):
    pass


def _as_arch(arch) -> ArchEncoding:
    return ArchEncoding.from_key(arch) if isinstance(arch, str) else arch


class StandaloneClassifier(ClassifierMixin, BaseEstimator):
    """One architecture at its own widths, trained from scratch with cross-entropy.

    ``arch`` may be an ArchEncoding or its string key. With ``eval_set`` the
    accuracy after every epoch is kept and the best one is ``best_accuracy_``.
    """

    def __init__(self, space: SupernetConfig | None = None, arch=None, epochs: int = 30, batch_size: int = 64,
                 lr: float = 0.005, lr_decay: float = 0.95, seed: int = 0):
        self.space = space
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.seed = seed

    def fit(self, X, y, eval_set=None):
        space = self.space if self.space is not None else desk_config()
        if self.arch is None:
            raise ValueError("arch is required")
        arch = _as_arch(self.arch)
        validate_encoding(space, arch)
        X = _validation.check_images(X, space.input_channels, space.input_size)
        y = _validation.check_labels(y, len(X), space.num_classes)
        self.classes_ = np.arange(space.num_classes)
        self.graph_ = assemble_standalone(space, arch)
        self.params_ = init_params(self.graph_, np.random.default_rng([self.seed, 301]))
        self.eval_curve_ = []
        if eval_set is not None:
            Xv = _validation.check_images(eval_set[0], space.input_channels, space.input_size)
            yv = _validation.check_labels(eval_set[1], len(Xv), space.num_classes)
            self.eval_curve_.append(accuracy(self.graph_, self.params_, Xv, yv))
            on_epoch = lambda epoch, loss: self.eval_curve_.append(accuracy(self.graph_, self.params_, Xv, yv))
        else:
            on_epoch = None
        self.loss_curve_ = fit_classifier(lambda rng: self.graph_, self.params_, X, y, epochs=self.epochs,
                                          batch_size=self.batch_size, opt=OptimizerConfig("adam", lr=self.lr),
                                          lr_decay=self.lr_decay, rng=np.random.default_rng([self.seed, 302]),
                                          on_epoch=on_epoch)
        self.best_accuracy_ = max(self.eval_curve_) if self.eval_curve_ else float("nan")
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        return predict_logits(self.graph_, self.params_, _validation.check_images(X))

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)


def retrain_standalone(space: SupernetConfig, arch: ArchEncoding, train, eval_split, epochs: int = 30,
                       batch_size: int = 64, lr: float = 0.005, lr_decay: float = 0.95, seed: int = 0) -> float:
    """Best eval accuracy over a fixed from-scratch training budget (epoch 0 = untrained)."""
    clf = StandaloneClassifier(space, arch, epochs, batch_size, lr, lr_decay, seed)
    clf.fit(train.images, train.labels, eval_set=(eval_split.images, eval_split.labels))
    return clf.best_accuracy_


def spos_predict(supernet: SPOSSupernet, arch: ArchEncoding, X, y) -> float:
    return supernet.score_arch(arch, X, y)


def dna_score(rankings: Sequence[PathRanking], arch: ArchEncoding, lam: Sequence[float] | None = None) -> float:
    """Negated weighted loss sum, so larger is better."""
    return -arch_loss(rankings, arch, lam)


def rank_correlation(predicted: Sequence[float], actual: Sequence[float]) -> dict[str, float]:
    """Kendall tau-b and Spearman rho between predicted scores and true accuracies."""
    x = np.asarray(predicted, dtype=float)
    y = np.asarray(actual, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise CorrelationError("predicted and actual must be 1-D and the same length")
    if len(x) < 3:
        raise CorrelationError(f"need at least 3 trials, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise CorrelationError("scores contain NaN or Inf")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise CorrelationError("correlation is undefined for a constant score vector")
    return {"kendall_tau": float(stats.kendalltau(x, y).statistic),
            "spearman_rho": float(stats.spearmanr(x, y).statistic)}


@dataclass
class RankTrial:
    arch: ArchEncoding
    dna_score: float
    spos_score: float
    true_acc: float
    seed: int


def trial_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def trials_to_csv(trials: Sequence[RankTrial]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arch_id", "encoding", "dna_score", "spos_score", "true_acc", "seed"])
    for i, t in enumerate(trials):
        w.writerow([i, t.arch.key(), repr(t.dna_score), repr(t.spos_score), repr(t.true_acc), t.seed])
    return buf.getvalue()


def trials_from_csv(text: str) -> list[RankTrial]:
    return [RankTrial(ArchEncoding.from_key(r["encoding"]), float(r["dna_score"]), float(r["spos_score"]),
                      float(r["true_acc"]), int(r["seed"])) for r in csv.DictReader(io.StringIO(text))]


def correlation_summary(trials: Sequence[RankTrial]) -> dict[str, dict[str, float]]:
    true = [t.true_acc for t in trials]
    return {"dna": rank_correlation([t.dna_score for t in trials], true),
            "spos": rank_correlation([t.spos_score for t in trials], true)}


def summary_csv(summary: dict[str, dict[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["predictor", "kendall_tau", "spearman_rho"])
    for name, s in summary.items():
        w.writerow([name, repr(s["kendall_tau"]), repr(s["spearman_rho"])])
    return buf.getvalue()


def report_text(trials: Sequence[RankTrial], summary: dict[str, dict[str, float]]) -> str:
    lines = [f"ranking fidelity over {len(trials)} retrained architectures", ""]
    lines.append(f"{'id':>3}  {'encoding':<40} {'dna':>9} {'spos':>7} {'true':>7}")
    for i, t in enumerate(trials):
        lines.append(f"{i:>3}  {t.arch.key():<40} {t.dna_score:>9.4f} {t.spos_score:>7.4f} {t.true_acc:>7.4f}")
    lines.append("")
    for name, s in summary.items():
        lines.append(f"{name}: kendall_tau={s['kendall_tau']:.4f} spearman_rho={s['spearman_rho']:.4f}")
    return "\n".join(lines) + "\n"
