from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np


class MissingGradientError(RuntimeError):
    pass


class ParameterSet:
    """Named tensors plus gradients and per-parameter optimizer state.

    Buffers (batchnorm running statistics) live in the same namespace but are
    flagged non-trainable, so they checkpoint together with the weights.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.trainable: dict[str, bool] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, dict] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        self.values[name] = value
        self.trainable[name] = trainable

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def names(self, trainable: bool | None = None) -> list[str]:
        if trainable is None:
            return list(self.values)
        return [n for n, t in self.trainable.items() if t == trainable]

    def grad(self, name: str) -> np.ndarray:
        """Gradient from the last backward; zeros if the tape never reached ``name``."""
        g = self.grads.get(name)
        return np.zeros_like(self.values[name]) if g is None else g

    def zero_grad(self) -> None:
        self.grads = {}

    def accumulate(self, name: str, g: np.ndarray) -> None:
        if g.shape != self.values[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {self.values[name].shape}")
        if name in self.grads:
            self.grads[name] = self.grads[name] + g
        else:
            self.grads[name] = g

    def count(self, prefix: str = "") -> int:
        """Number of trainable scalars, optionally restricted to a name prefix."""
        return int(sum(v.size for n, v in self.values.items() if self.trainable[n] and n.startswith(prefix)))

    def astype(self, dtype) -> "ParameterSet":
        out = ParameterSet()
        for n, v in self.values.items():
            out.add(n, v.astype(dtype), self.trainable[n])
        return out

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for n, v in self.values.items():
            out.add(n, v.copy(), self.trainable[n])
        return out

    def subset(self, names: Iterable[str]) -> "ParameterSet":
        """A view sharing storage with ``self`` for the given names."""
        out = ParameterSet()
        for n in names:
            out.add(n, self.values[n], self.trainable[n])
        return out

    def update(self, other: "ParameterSet") -> None:
        for n in other:
            if n in self.values:
                self.values[n] = other.values[n]
                self.trainable[n] = other.trainable[n]
            else:
                self.add(n, other.values[n], other.trainable[n])

    def to_dict(self) -> dict[str, np.ndarray]:
        return dict(self.values)

    @classmethod
    def from_dict(cls, tensors: dict[str, np.ndarray], buffers: Iterable[str] = ()) -> "ParameterSet":
        buffers = set(buffers)
        out = cls()
        for n, v in tensors.items():
            out.add(n, v, n not in buffers)
        return out


@dataclass
class OptimizerConfig:
    rule: str = "adam"
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 0.9  # rmsprop squared-gradient decay
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.rule not in ("adam", "rmsprop", "sgd"):
            raise ValueError(f"unknown optimizer rule {self.rule!r}")


def optimizer_step(params: ParameterSet, cfg: OptimizerConfig, names: Iterable[str] | None = None) -> None:
    """Update every trainable parameter that received a gradient in the last backward.

    Parameters the tape did not reach are skipped entirely (moments and step
    counter untouched), so unsampled supernet paths stay bit-identical.
    ``names`` restricts the update further (used to freeze earlier blocks).
    """
    if not params.grads:
        raise MissingGradientError("optimizer_step called without gradients; run backward first")
    targets = params.grads.keys() if names is None else [n for n in names if n in params.grads]
    for name in list(targets):
        if not params.trainable[name]:
            continue
        w = params.values[name]
        g = params.grads[name].astype(w.dtype, copy=False)
        if cfg.weight_decay:
            g = g + cfg.weight_decay * w
        st = params.state.setdefault(name, {"step": 0})
        st["step"] += 1
        t = st["step"]
        if cfg.rule == "sgd":
            if cfg.momentum:
                buf = st.get("m")
                buf = g.copy() if buf is None else cfg.momentum * buf + g
                st["m"] = buf
                g = buf
            w -= (cfg.lr * g).astype(w.dtype)
        elif cfg.rule == "adam":
            m = st.get("m")
            v = st.get("v")
            if m is None:
                m = np.zeros_like(w)
                v = np.zeros_like(w)
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            st["m"], st["v"] = m, v
            mhat = m / (1 - cfg.beta1 ** t)
            vhat = v / (1 - cfg.beta2 ** t)
            w -= (cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)).astype(w.dtype)
        else:
            v = st.get("v")
            v = np.zeros_like(w) if v is None else v
            v = cfg.alpha * v + (1 - cfg.alpha) * g * g
            st["v"] = v
            upd = g / (np.sqrt(v) + cfg.eps)
            if cfg.momentum:
                buf = st.get("m")
                buf = upd if buf is None else cfg.momentum * buf + upd
                st["m"] = buf
                upd = buf
            w -= (cfg.lr * upd).astype(w.dtype)
