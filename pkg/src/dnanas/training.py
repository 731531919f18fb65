"""Supervised classification loop shared by the teacher, stand-alone retraining and SPOS."""
from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from .data import batches
from .engine import TARGET, Graph, LayerSpec, NonFiniteError, OptimizerConfig, ParameterSet, backward, forward, optimizer_step

log = logging.getLogger(__name__)


def with_ce_loss(graph: Graph) -> Graph:
    g = Graph(list(graph.nodes))
    g.add("loss", LayerSpec("softmax_ce"), g.output, TARGET)
    return g


def predict_logits(graph: Graph, params: ParameterSet, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    outs = [forward(graph, X[idx], params, "eval")[0] for idx in batches(len(X), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, 0), np.float32)


def accuracy(graph: Graph, params: ParameterSet, X: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict_logits(graph, params, X, batch_size).argmax(axis=1) == y))


def fit_classifier(graph_for_step: Callable[[np.random.Generator], Graph], params: ParameterSet,
                   X: np.ndarray, y: np.ndarray, *, epochs: int, batch_size: int, opt: OptimizerConfig,
                   lr_decay: float, rng: np.random.Generator,
                   on_epoch: Callable[[int, float], None] | None = None) -> list[tuple[int, int, float]]:
    """Cross-entropy training; ``graph_for_step`` may return a different path each step.

    Returns the loss curve as (epoch, step, loss) rows.
    """
    curve = []
    step = 0
    base_lr = opt.lr
    for epoch in range(epochs):
        opt.lr = base_lr * lr_decay ** epoch
        losses = []
        for idx in batches(len(X), batch_size, rng):
            g = with_ce_loss(graph_for_step(rng))
            loss, tape = forward(g, X[idx], params, "train", target=y[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch} step {step}")
            backward(tape)
            optimizer_step(params, opt)
            curve.append((epoch, step, float(loss)))
            losses.append(float(loss))
            step += 1
        log.info("epoch=%d steps=%d loss=%.5f", epoch, step, np.mean(losses))
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(losses)))
    opt.lr = base_lr
    return curve
