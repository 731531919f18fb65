"""Teacher network, its block partition, and the on-disk cache of per-block features."""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import _validation
from .data import Dataset, batches
from .engine import Graph, INPUT, OptimizerConfig, ParameterSet, ShapeError, forward, init_params
from .engine import checkpoint as ckpt
from .space import OpSpec, SupernetConfig, add_head, add_mbconv, add_stem, desk_config
from .training import accuracy, fit_classifier, predict_logits

log = logging.getLogger(__name__)


class TeacherFloorError(RuntimeError):
    def __init__(self, accuracy: float, floor: float):
        super().__init__(f"teacher accuracy {accuracy:.4f} below floor {floor:.4f}")
        self.accuracy = accuracy
        self.floor = floor


def _teacher_block(space: SupernetConfig, i: int, op: OpSpec) -> Graph:
    b = space.blocks[i]
    g = Graph()
    h = INPUT
    cin = b.teacher_in_width
    for j in range(b.teacher_layers):
        h = add_mbconv(g, h, f"t{i}.l{j}", op, cin, b.teacher_out_width, b.stride if j == 0 else 1, space.activation)
        cin = b.teacher_out_width
    return g


class TeacherClassifier(ClassifierMixin, BaseEstimator):
    """Fixed MBConv classifier whose block outputs supervise the supernet.

    ``boundaries_`` lists the node index that closes each block in ``graph_``.
    """

    def __init__(self, space: SupernetConfig | None = None, epochs: int = 12, batch_size: int = 64, lr: float = 0.005,
                 lr_decay: float = 0.9, floor: float = 0.85, kernel: int = 3, expansion: int = 6, seed: int = 0):
        self.space = space
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.floor = floor
        self.kernel = kernel
        self.expansion = expansion
        self.seed = seed

    @property
    def space_(self) -> SupernetConfig:
        return self.space if self.space is not None else desk_config()

    def _build(self):
        space = self.space_
        op = OpSpec(self.kernel, self.expansion, space.ops[0].se_ratio)
        self.stem_graph_ = Graph()
        add_stem(self.stem_graph_, space, space.stem_width)
        self.block_graphs_ = [_teacher_block(space, i, op) for i in range(len(space.blocks))]
        self.head_graph_ = Graph()
        add_head(self.head_graph_, space.blocks[-1].teacher_out_width, space.num_classes)
        g = Graph()
        g.extend(self.stem_graph_)
        self.boundaries_ = []
        for bg in self.block_graphs_:
            g.extend(bg)
            self.boundaries_.append(g.output)
        g.extend(self.head_graph_)
        self.graph_ = g

    def fit(self, X, y, eval_set=None):
        space = self.space_
        X = _validation.check_images(X, space.input_channels, space.input_size)
        y = _validation.check_labels(y, len(X), space.num_classes)
        self.classes_ = np.arange(space.num_classes)
        self._build()
        self.params_ = init_params(self.graph_, np.random.default_rng([self.seed, 101]))
        opt = OptimizerConfig("adam", lr=self.lr)
        self.loss_curve_ = fit_classifier(lambda rng: self.graph_, self.params_, X, y, epochs=self.epochs,
                                          batch_size=self.batch_size, opt=opt, lr_decay=self.lr_decay,
                                          rng=np.random.default_rng([self.seed, 102]))
        if eval_set is not None:
            Xv, yv = eval_set
            Xv = _validation.check_images(Xv, space.input_channels, space.input_size)
            self.val_accuracy_ = accuracy(self.graph_, self.params_, Xv, _validation.check_labels(yv, len(Xv), space.num_classes))
        else:
            self.val_accuracy_ = accuracy(self.graph_, self.params_, X, y)
        log.info("teacher accuracy %.4f (floor %.2f)", self.val_accuracy_, self.floor)
        if self.val_accuracy_ < self.floor:
            raise TeacherFloorError(self.val_accuracy_, self.floor)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = _validation.check_images(X, self.space_.input_channels, self.space_.input_size)
        return predict_logits(self.graph_, self.params_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)

    def block_outputs(self, X, batch_size: int = 256) -> list[np.ndarray]:
        """[Y_0, Y_1, ..., Y_N]: the stem output followed by every block output, eval mode."""
        check_is_fitted(self, "params_")
        X = _validation.check_images(X, self.space_.input_channels, self.space_.input_size)
        per_batch = []
        for idx in batches(len(X), batch_size):
            h, _ = forward(self.stem_graph_, X[idx], self.params_, "eval")
            outs = [h]
            for bg in self.block_graphs_:
                h, _ = forward(bg, h, self.params_, "eval")
                outs.append(h)
            per_batch.append(outs)
        return [np.concatenate([b[i] for b in per_batch]) for i in range(len(self.block_graphs_) + 1)]

    def run_block(self, i: int, Y_prev: np.ndarray, batch_size: int = 256) -> np.ndarray:
        check_is_fitted(self, "params_")
        outs = [forward(self.block_graphs_[i], Y_prev[idx], self.params_, "eval")[0] for idx in batches(len(Y_prev), batch_size)]
        return np.concatenate(outs)

    def save(self, path: str | Path, manifest: dict | None = None) -> None:
        check_is_fitted(self, "params_")
        meta = {"kind": "teacher", "estimator": self.get_params(deep=False) | {"space": self.space_.to_dict()},
                "val_accuracy": self.val_accuracy_, "buffers": self.graph_.buffer_names(), "manifest": manifest or {}}
        ckpt.save(path, self.params_.to_dict(), meta)

    @classmethod
    def load(cls, path: str | Path) -> "TeacherClassifier":
        tensors, meta = ckpt.load(path)
        est = dict(meta["estimator"])
        est["space"] = SupernetConfig.from_dict(est["space"])
        self = cls(**est)
        self._build()
        self.classes_ = np.arange(self.space_.num_classes)
        self.params_ = ParameterSet.from_dict(tensors, meta["buffers"])
        self.val_accuracy_ = meta["val_accuracy"]
        return self


class FeatureCache:
    """Teacher block features per split: ``features[split][i]`` is Y_i (Y_0 = stem output)."""

    def __init__(self, features: dict[str, list[np.ndarray]], teacher_digest: str = ""):
        self.features = features
        self.teacher_digest = teacher_digest
        self.stats = {
            split: [(float(np.mean(y, dtype=np.float64)), float(np.std(y, dtype=np.float64))) for y in ys]
            for split, ys in features.items()
        }

    @property
    def n_blocks(self) -> int:
        return len(next(iter(self.features.values()))) - 1

    @property
    def splits(self) -> list[str]:
        return list(self.features)

    def get(self, split: str, i: int) -> np.ndarray:
        try:
            return self.features[split][i]
        except (KeyError, IndexError):
            raise KeyError(f"feature cache has no Y_{i} for split {split!r}") from None

    def sigma(self, split: str, i: int) -> float:
        """Population standard deviation over all elements of Y_i on ``split``."""
        return self.stats[split][i][1]

    def save(self, directory: str | Path, manifest: dict | None = None) -> None:
        directory = Path(directory)
        index = {"teacher_digest": self.teacher_digest, "manifest": manifest or {}, "files": {}}
        for split, ys in self.features.items():
            for i, y in enumerate(ys):
                name = f"{split}_Y{i}.bin"
                ckpt.save(directory / name, {"Y": y}, {"split": split, "block": i})
                index["files"][name] = {"split": split, "block": i, "shape": list(y.shape),
                                        "mean": self.stats[split][i][0], "std": self.stats[split][i][1]}
        ckpt.atomic_write(directory / "index.json", json.dumps(index, indent=2, sort_keys=True).encode())

    @classmethod
    def load(cls, directory: str | Path) -> "FeatureCache":
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text())
        features: dict[str, list] = {}
        for name, entry in sorted(index["files"].items(), key=lambda kv: (kv[1]["split"], kv[1]["block"])):
            tensors, _ = ckpt.load(directory / name)
            features.setdefault(entry["split"], []).append(tensors["Y"])
        return cls(features, index.get("teacher_digest", ""))


def params_digest(params: ParameterSet) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


def extract_features(teacher: TeacherClassifier, datasets: dict[str, Dataset], batch_size: int = 256) -> FeatureCache:
    space = teacher.space_
    features = {}
    for split, ds in datasets.items():
        ys = teacher.block_outputs(ds.images, batch_size)
        for i, b in enumerate(space.blocks):
            expected = (len(ds), b.teacher_out_width, b.out_size, b.out_size)
            if ys[i + 1].shape != expected:
                raise ShapeError(f"Y_{i + 1} on {split} has shape {ys[i + 1].shape}, config expects {expected}")
        features[split] = ys
    return FeatureCache(features, params_digest(teacher.params_))
