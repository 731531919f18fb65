"""Block-wise supernet distillation, the progressive S1/S2 variants, and the one-shot baseline."""
from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import _validation
from .data import batches
from .engine import (TARGET, Graph, LayerSpec, NonFiniteError, OptimizerConfig, ParameterSet, backward, forward,
                     init_params, optimizer_step)
from .engine import checkpoint as ckpt
from .space import (ArchEncoding, BlockChoice, CellSpec, SupernetConfig, assemble_standalone, desk_config,
                    layer_widths, op_graph)
from .training import accuracy, fit_classifier, predict_logits

log = logging.getLogger(__name__)


class StrategyError(ValueError):
    pass


def sample_path(cell: CellSpec, n_ops: int, rng: np.random.Generator) -> tuple[int, ...]:
    """One op per layer, independently and uniformly."""
    return tuple(int(o) for o in rng.integers(0, n_ops, size=cell.layers))


def block_layer_graphs(space: SupernetConfig, block: int) -> list[list[list[Graph]]]:
    """``graphs[cell][layer][op]`` at distillation widths, parameters prefixed ``b<block>.cell<c>``."""
    b = space.blocks[block]
    out = []
    for c, cell in enumerate(b.cells):
        layers = []
        for j, (ci, co) in enumerate(layer_widths(cell, b.teacher_in_width, b.teacher_out_width)):
            stride = b.stride if j == 0 else 1
            layers.append([op_graph(space, f"b{block}.cell{c}.l{j}.o{o}", o, ci, co, stride) for o in range(space.n_ops)])
        out.append(layers)
    return out


def chain(layer_graphs: list[list[Graph]], path: Sequence[int], g: Graph | None = None) -> Graph:
    g = Graph() if g is None else g
    for j, o in enumerate(path):
        g.extend(layer_graphs[j][o])
    return g


def with_mse(g: Graph) -> Graph:
    g = Graph(list(g.nodes))
    g.add("mse", LayerSpec("mse_loss"), g.output, TARGET)
    return g


class BlockDistiller(BaseEstimator):
    """Trains every cell of one supernet block to reproduce the teacher block output.

    Each step takes the next cell in round-robin order, samples one op per
    layer, and minimizes the mean squared error against the teacher feature.
    RNG streams derive from (seed, block) only, so blocks train independently.
    """

    def __init__(self, space: SupernetConfig | None = None, block: int = 0, epochs: int = 20, batch_size: int = 64,
                 lr: float | None = None, lr_decay: float = 0.9, seed: int = 0):
        self.space = space
        self.block = block
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.seed = seed

    @property
    def space_(self) -> SupernetConfig:
        return self.space if self.space is not None else desk_config()

    @property
    def lr_(self) -> float:
        if self.lr is not None:
            return self.lr
        return 0.002 if self.block == 0 else 0.005

    def _init(self):
        space = self.space_
        if not 0 <= self.block < len(space.blocks):
            raise IndexError(f"block {self.block} out of range")
        self.layer_graphs_ = block_layer_graphs(space, self.block)
        self.params_ = ParameterSet()
        for c, layers in enumerate(self.layer_graphs_):
            rng = np.random.default_rng([self.seed, self.block, c, 11])
            for per_op in layers:
                for g in per_op:
                    init_params(g, rng, params=self.params_)
        self.loss_curve_ = []
        self.n_steps_ = 0

    def _check_shapes(self, Y_prev, Y_curr):
        b = self.space_.blocks[self.block]
        if Y_prev.shape[1:] != (b.teacher_in_width, b.in_size, b.in_size):
            raise ValueError(f"block {self.block} input features have shape {Y_prev.shape[1:]}")
        if Y_curr.shape[1:] != (b.teacher_out_width, b.out_size, b.out_size):
            raise ValueError(f"block {self.block} target features have shape {Y_curr.shape[1:]}")

    def fit(self, Y_prev, Y_curr):
        """Distill from teacher features: ``Y_prev`` feeds every cell, ``Y_curr`` is the target."""
        Y_prev, Y_curr = _validation.check_pair(Y_prev, Y_curr)
        self._check_shapes(Y_prev, Y_curr)
        self._init()
        self._train(lambda idx, rng: (Y_prev[idx], None), Y_curr, self.params_)
        return self

    def _train(self, get_input: Callable, Y_curr: np.ndarray, params: ParameterSet,
               trainable: Sequence[str] | None = None) -> None:
        space = self.space_
        cells = space.blocks[self.block].cells
        rng = np.random.default_rng([self.seed, self.block, 12])
        prefix_rng = np.random.default_rng([self.seed, self.block, 13])
        opt = OptimizerConfig("adam", lr=self.lr_)
        step = 0
        for epoch in range(self.epochs):
            opt.lr = self.lr_ * self.lr_decay ** epoch
            for idx in batches(len(Y_curr), self.batch_size, rng):
                c = step % len(cells)
                path = sample_path(cells[c], space.n_ops, rng)
                x, prefix = get_input(idx, prefix_rng)
                g = Graph() if prefix is None else Graph(list(prefix.nodes))
                g = with_mse(chain(self.layer_graphs_[c], path, g))
                loss, tape = forward(g, x, params, "train", target=Y_curr[idx])
                if not np.isfinite(loss):
                    raise NonFiniteError(f"block {self.block}: non-finite loss at epoch {epoch} step {step}")
                backward(tape)
                optimizer_step(params, opt, trainable)
                self.loss_curve_.append((epoch, step, c, float(loss)))
                step += 1
            log.info("block=%d epoch=%d step=%d loss=%.6f", self.block, epoch, step,
                     self.epoch_means()[-1] if self.loss_curve_ else float("nan"))
        self.n_steps_ = step

    def epoch_means(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for epoch, _, _, loss in self.loss_curve_:
            by_epoch.setdefault(epoch, []).append(loss)
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]

    def predict(self, Y_prev, choice: BlockChoice, batch_size: int = 256) -> np.ndarray:
        """Eval-mode output of one (cell, path) on ``Y_prev``."""
        check_is_fitted(self, "params_")
        g = chain(self.layer_graphs_[choice.cell], choice.ops)
        return np.concatenate([forward(g, Y_prev[i], self.params_, "eval")[0] for i in batches(len(Y_prev), batch_size)])

    def block_params(self) -> ParameterSet:
        prefix = f"b{self.block}."
        return self.params_.subset([n for n in self.params_ if n.startswith(prefix)])

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "step", "cell_index", "loss"])
        for row in self.loss_curve_:
            w.writerow([row[0], row[1], row[2], repr(row[3])])
        return buf.getvalue()

    def save(self, path: str | Path, manifest: dict | None = None) -> None:
        check_is_fitted(self, "params_")
        ps = self.block_params()
        est = self.get_params(deep=False) | {"space": self.space_.to_dict()}
        meta = {"kind": "block", "estimator": est, "n_steps": self.n_steps_,
                "buffers": ps.names(trainable=False), "loss_curve": [list(r) for r in self.loss_curve_],
                "manifest": manifest or {}}
        ckpt.save(path, ps.to_dict(), meta)

    @classmethod
    def load(cls, path: str | Path) -> "BlockDistiller":
        tensors, meta = ckpt.load(path)
        est = dict(meta["estimator"])
        est["space"] = SupernetConfig.from_dict(est["space"])
        self = cls(**est)
        self.layer_graphs_ = block_layer_graphs(self.space_, self.block)
        self.params_ = ParameterSet.from_dict(tensors, meta["buffers"])
        self.loss_curve_ = [tuple(r) for r in meta["loss_curve"]]
        self.n_steps_ = meta["n_steps"]
        return self


def _sample_prefix(space: SupernetConfig, prev: list[BlockDistiller], rng: np.random.Generator) -> Graph:
    """A random (cell, path) through each earlier block, chained."""
    g = Graph()
    for d in prev:
        cells = space.blocks[d.block].cells
        c = int(rng.integers(len(cells)))
        chain(d.layer_graphs_[c], sample_path(cells[c], space.n_ops, rng), g)
    return g


def train_block_sequential(space: SupernetConfig, Y0: np.ndarray, targets: Sequence[np.ndarray], strategy: str,
                           epochs: int = 20, batch_size: int = 64, lr_decay: float = 0.9, seed: int = 0,
                           blocks: Sequence[int] | None = None, lr_first: float = 0.002,
                           lr_rest: float = 0.005) -> list[BlockDistiller]:
    """Progressive distillation where block i sees the student's own earlier blocks.

    ``s1`` retrains all earlier blocks from scratch jointly at every stage;
    ``s2`` keeps earlier blocks frozen at their previous-stage weights.
    ``targets[i]`` is the teacher output of block i; ``Y0`` feeds block 0.
    """
    if strategy not in ("s1", "s2"):
        raise StrategyError(f"sequential training supports s1/s2 only, got {strategy!r}")
    blocks = list(range(len(space.blocks))) if blocks is None else list(blocks)
    if blocks != list(range(len(blocks))):
        raise StrategyError(f"blocks must be processed in ascending order from 0, got {blocks}")
    Y0 = _validation.check_images(Y0, name="Y0")
    done: list[BlockDistiller] = []
    for i in blocks:
        Yi = _validation.check_images(targets[i], name=f"Y{i + 1}")
        d = BlockDistiller(space, i, epochs, batch_size, lr_first if i == 0 else lr_rest, lr_decay, seed)
        d._init()
        if strategy == "s1":
            prev = []
            merged = ParameterSet()
            for j in range(i):
                pj = BlockDistiller(space, j, epochs, batch_size, lr_first if j == 0 else lr_rest, lr_decay, seed)
                pj._init()
                prev.append(pj)
                merged.update(pj.params_)
            merged.update(d.params_)

            def get_input(idx, rng, prev=prev):
                return Y0[idx], (_sample_prefix(space, prev, rng) if prev else None)

            d._train(get_input, Yi, merged)
            for pj in prev:
                d.params_.update(pj.params_)
        else:
            prev = list(done)
            frozen = _frozen(prev)

            def get_input(idx, rng, prev=prev, frozen=frozen):
                x = Y0[idx]
                if prev:
                    x, _ = forward(_sample_prefix(space, prev, rng), x, frozen, "eval")
                return x, None

            d._train(get_input, Yi, d.params_)
        done.append(d)
    return done


def _frozen(prev: list[BlockDistiller]) -> ParameterSet:
    ps = ParameterSet()
    for d in prev:
        ps.update(d.block_params())
    return ps


def _with_bn_momentum(g: Graph, momentum: float) -> Graph:
    out = Graph()
    for n in g.nodes:
        spec = n.spec
        if spec.kind == "batchnorm":
            spec = LayerSpec("batchnorm", {**spec.attrs, "momentum": momentum})
        out.nodes.append(type(n)(n.name, spec, n.inputs))
    return out


class SPOSSupernet(ClassifierMixin, BaseEstimator):
    """Single-path one-shot baseline: one shared-weight supernet trained end to end.

    Every step samples a cell per block and an op per layer uniformly and
    minimizes cross-entropy; weights are shared by (block, cell, layer, op).
    """

    def __init__(self, space: SupernetConfig | None = None, epochs: int = 60, batch_size: int = 64, lr: float = 0.005,
                 lr_decay: float = 0.9, calibration_batches: int = 4, seed: int = 0):
        self.space = space
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.calibration_batches = calibration_batches
        self.seed = seed

    @property
    def space_(self) -> SupernetConfig:
        return self.space if self.space is not None else desk_config()

    def sample_arch(self, rng: np.random.Generator) -> ArchEncoding:
        space = self.space_
        out = []
        for b in space.blocks:
            c = int(rng.integers(len(b.cells)))
            out.append(BlockChoice(c, sample_path(b.cells[c], space.n_ops, rng)))
        return ArchEncoding(tuple(out))

    def _init(self):
        space = self.space_
        rng = np.random.default_rng([self.seed, 201])
        self.params_ = ParameterSet()
        # canonical order: every (block, cell, layer, op) once, via single-choice archs
        for i, b in enumerate(space.blocks):
            for c, cell in enumerate(b.cells):
                for o in range(space.n_ops):
                    arch = [BlockChoice(0, (0,) * space.blocks[k].cells[0].layers) for k in range(len(space.blocks))]
                    arch[i] = BlockChoice(c, (o,) * cell.layers)
                    init_params(assemble_standalone(space, ArchEncoding(tuple(arch))), rng, params=self.params_)

    def fit(self, X, y):
        space = self.space_
        X = _validation.check_images(X, space.input_channels, space.input_size)
        y = _validation.check_labels(y, len(X), space.num_classes)
        self.classes_ = np.arange(space.num_classes)
        self._init()
        self.loss_curve_ = fit_classifier(lambda rng: assemble_standalone(space, self.sample_arch(rng)), self.params_,
                                          X, y, epochs=self.epochs, batch_size=self.batch_size,
                                          opt=OptimizerConfig("adam", lr=self.lr), lr_decay=self.lr_decay,
                                          rng=np.random.default_rng([self.seed, 202]))
        self.n_steps_ = len(self.loss_curve_)
        n_cal = min(len(X), self.calibration_batches * self.batch_size)
        self.calibration_ = X[np.random.default_rng([self.seed, 203]).permutation(len(X))[:n_cal]]
        return self

    def calibrated_params(self, arch: ArchEncoding) -> tuple[Graph, ParameterSet]:
        """Copy of the shared weights with batchnorm statistics re-estimated for ``arch``."""
        check_is_fitted(self, "params_")
        g = assemble_standalone(self.space_, arch)
        missing = [n for n in g.param_names() + g.buffer_names() if n not in self.params_]
        if missing:
            raise KeyError(f"checkpoint lacks parameters for this architecture: {missing[:3]}")
        params = self.params_.subset(g.param_names() + g.buffer_names())
        for n in g.buffer_names():
            params.values[n] = params[n].copy()
        for t, idx in enumerate(batches(len(self.calibration_), self.batch_size), start=1):
            forward(_with_bn_momentum(g, (t - 1) / t), self.calibration_[idx], params, "train", record=False)
        return g, params

    def score_arch(self, arch: ArchEncoding, X, y) -> float:
        """Accuracy of ``arch`` with inherited shared weights."""
        X = _validation.check_images(X, self.space_.input_channels, self.space_.input_size)
        y = _validation.check_labels(y, len(X), self.space_.num_classes)
        g, params = self.calibrated_params(arch)
        return accuracy(g, params, X, y)

    def predict(self, X, arch: ArchEncoding | None = None):
        g, params = self.calibrated_params(arch or self.sample_arch(np.random.default_rng(self.seed)))
        X = _validation.check_images(X, self.space_.input_channels, self.space_.input_size)
        return predict_logits(g, params, X).argmax(axis=1)

    def save(self, path: str | Path, manifest: dict | None = None) -> None:
        check_is_fitted(self, "params_")
        tensors = self.params_.to_dict() | {"__calibration__": self.calibration_}
        meta = {"kind": "spos", "estimator": self.get_params(deep=False) | {"space": self.space_.to_dict()},
                "buffers": self.params_.names(trainable=False), "n_steps": self.n_steps_,
                "loss_curve": [list(r) for r in self.loss_curve_], "manifest": manifest or {}}
        ckpt.save(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "SPOSSupernet":
        tensors, meta = ckpt.load(path)
        est = dict(meta["estimator"])
        est["space"] = SupernetConfig.from_dict(est["space"])
        self = cls(**est)
        self.calibration_ = tensors.pop("__calibration__")
        self.params_ = ParameterSet.from_dict(tensors, meta["buffers"])
        self.classes_ = np.arange(self.space_.num_classes)
        self.n_steps_ = meta["n_steps"]
        self.loss_curve_ = [tuple(r) for r in meta["loss_curve"]]
        return self

