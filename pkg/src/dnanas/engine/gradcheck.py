"""Finite-difference verification of analytic layer gradients (float64)."""
from __future__ import annotations

import numpy as np

from .graph import INPUT, TARGET, Graph, backward, forward, init_params
from .layers import LOSS_KINDS, LayerSpec, act, batchnorm, conv, dwconv, linear, squeeze_excite

STEP = 1e-5


def random_spec(kind: str, rng: np.random.Generator, fn: str | None = None) -> LayerSpec:
    c = int(rng.integers(1, 5))
    if kind == "conv2d":
        k = int(rng.choice([1, 3, 5]))
        return conv(c, int(rng.integers(1, 5)), k, stride=int(rng.integers(1, 3)), bias=bool(rng.integers(2)))
    if kind == "dwconv2d":
        return dwconv(c, int(rng.choice([3, 5, 7])), stride=int(rng.integers(1, 3)))
    if kind == "batchnorm":
        return batchnorm(c)
    if kind == "activation":
        return act(fn or str(rng.choice(["swish", "relu", "sigmoid"])))
    if kind == "squeeze_excite":
        return squeeze_excite(c + 1, int(rng.integers(1, 3)), fn=fn or "swish")
    if kind == "linear":
        return linear(c, int(rng.integers(1, 5)), bias=bool(rng.integers(2)))
    return LayerSpec(kind)


def _input_shape(spec: LayerSpec, rng: np.random.Generator) -> tuple[int, ...]:
    n = int(rng.integers(2, 4))
    hw = (int(rng.integers(5, 9)), int(rng.integers(5, 9)))
    a = spec.attrs
    if spec.kind == "conv2d":
        return (n, a["in_ch"], *hw)
    if spec.kind in ("dwconv2d", "squeeze_excite"):
        return (n, a["channels"], *hw)
    if spec.kind == "batchnorm":
        return (n, a["channels"], *hw) if rng.integers(2) else (n + 2, a["channels"])
    if spec.kind == "linear":
        return (n, a["in_features"])
    if spec.kind == "softmax_ce":
        return (n, int(rng.integers(2, 6)))
    return (n, int(rng.integers(1, 4)), *hw)


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_trial(spec: LayerSpec, rng: np.random.Generator, mode: str = "train") -> float:
    """Worst relative error over all inputs and parameters for one random instance.

    The scalar under test is ``sum(out * R)`` for a fixed random R (or the loss
    itself for loss kinds). Errors are norm-wise per tensor:
    ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
    """
    shape = _input_shape(spec, rng)
    g = Graph()
    target = None
    if spec.kind == "add":
        g.add("other", act("sigmoid"), INPUT)
        g.add("layer", spec, INPUT, 0)
    elif spec.kind in LOSS_KINDS:
        g.add("layer", spec, INPUT, TARGET)
        if spec.kind == "mse_loss":
            target = rng.standard_normal(shape)
        else:
            target = rng.integers(0, shape[1], size=shape[0])
    else:
        g.add("layer", spec, INPUT)
    params = init_params(g, rng, dtype=np.float64)
    for name in params.names():
        value = rng.standard_normal(params[name].shape) * 0.5
        if name.endswith("running_var"):
            value = np.abs(value) + 0.5
        params.values[name] = value
    x = rng.standard_normal(shape)
    if spec.kind == "activation" and spec["fn"] == "relu":
        x = np.where(np.abs(x) < 1e-2, 0.5, x)
    out_shape = g.infer_shapes(shape)[-1]
    proj = rng.standard_normal(out_shape) if out_shape else None

    def scalar(xv: np.ndarray) -> float:
        out, _ = forward(g, xv, params, mode=mode, target=target)
        return float(out if proj is None else np.sum(out * proj))

    _, tape = forward(g, x, params, mode=mode, target=target, record=True)
    gx = backward(tape, proj)
    worst = _rel_err(gx, _numeric(scalar, x))
    for name in params.names(trainable=True):
        w = params.values[name]

        def fw(wv, name=name):
            saved = params.values[name]
            params.values[name] = wv
            try:
                return scalar(x)
            finally:
                params.values[name] = saved

        worst = max(worst, _rel_err(params.grad(name), _numeric(fw, w)))
    return worst


def _numeric(f, x: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + STEP
        fp = f(x)
        x[i] = orig - STEP
        fm = f(x)
        x[i] = orig
        grad[i] = (fp - fm) / (2 * STEP)
    return grad


def grad_check(spec: LayerSpec | str, trial_count: int = 20, seed: int = 0, mode: str = "train") -> float:
    """Max relative error across ``trial_count`` seeded random instances.

    A kind name draws fresh random attributes per trial; a LayerSpec keeps its
    attributes and only randomizes data and parameters.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trial_count):
        s = random_spec(spec, rng) if isinstance(spec, str) else spec
        worst = max(worst, check_trial(s, rng, mode=mode))
    return worst
