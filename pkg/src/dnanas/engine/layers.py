"""Layer kernels: shape inference, forward and backward for every supported kind.

Activations are NCHW arrays. Each kernel is dtype-generic, so the same code runs
in float32 for training and float64 for gradient verification.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.special import expit

KINDS = (
    "conv2d",
    "dwconv2d",
    "batchnorm",
    "activation",
    "squeeze_excite",
    "global_avg_pool",
    "linear",
    "add",
    "mse_loss",
    "softmax_ce",
)
LOSS_KINDS = ("mse_loss", "softmax_ce")
ACTIVATIONS = ("swish", "relu", "sigmoid")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "activation" and self.attrs.get("fn") not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.attrs.get('fn')!r}")

    def __getitem__(self, key: str) -> Any:
        return self.attrs[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.attrs.get(key, default)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Trainable parameter shapes, keyed by local name."""
        a = self.attrs
        if self.kind == "conv2d":
            shapes = {"weight": (a["out_ch"], a["in_ch"], a["kernel"], a["kernel"])}
            if a.get("bias", False):
                shapes["bias"] = (a["out_ch"],)
            return shapes
        if self.kind == "dwconv2d":
            return {"weight": (a["channels"], a["kernel"], a["kernel"])}
        if self.kind == "batchnorm":
            return {"weight": (a["channels"],), "bias": (a["channels"],)}
        if self.kind == "squeeze_excite":
            return {"reduce": (a["reduced"], a["channels"]), "expand": (a["channels"], a["reduced"])}
        if self.kind == "linear":
            shapes = {"weight": (a["out_features"], a["in_features"])}
            if a.get("bias", True):
                shapes["bias"] = (a["out_features"],)
            return shapes
        return {}

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "batchnorm":
            c = self.attrs["channels"]
            return {"running_mean": (c,), "running_var": (c,)}
        return {}


def conv(in_ch: int, out_ch: int, kernel: int = 1, stride: int = 1, padding: int | None = None,
         bias: bool = False) -> LayerSpec:
    if padding is None:
        padding = kernel // 2
    return LayerSpec("conv2d", dict(in_ch=in_ch, out_ch=out_ch, kernel=kernel, stride=stride,
                                    padding=padding, bias=bias))


def dwconv(channels: int, kernel: int, stride: int = 1, padding: int | None = None) -> LayerSpec:
    if padding is None:
        padding = kernel // 2
    return LayerSpec("dwconv2d", dict(channels=channels, kernel=kernel, stride=stride, padding=padding))


def batchnorm(channels: int, momentum: float = 0.9, eps: float = 1e-5) -> LayerSpec:
    return LayerSpec("batchnorm", dict(channels=channels, momentum=momentum, eps=eps))


def act(fn: str) -> LayerSpec:
    return LayerSpec("activation", dict(fn=fn))


def squeeze_excite(channels: int, reduced: int, fn: str = "swish") -> LayerSpec:
    return LayerSpec("squeeze_excite", dict(channels=channels, reduced=reduced, fn=fn))


def linear(in_features: int, out_features: int, bias: bool = True) -> LayerSpec:
    return LayerSpec("linear", dict(in_features=in_features, out_features=out_features, bias=bias))


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def infer_shape(spec: LayerSpec, in_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Output shape of ``spec`` applied to inputs of ``in_shapes``; raises ShapeError on mismatch."""
    k = spec.kind
    a = spec.attrs
    if k == "add":
        if len(in_shapes) != 2 or tuple(in_shapes[0]) != tuple(in_shapes[1]):
            raise ShapeError(f"add needs two equal shapes, got {in_shapes}")
        return tuple(in_shapes[0])
    if len(in_shapes) != 1:
        raise ShapeError(f"{k} takes one input, got {len(in_shapes)}")
    s = tuple(in_shapes[0])
    if k in ("conv2d", "dwconv2d", "squeeze_excite", "global_avg_pool") and len(s) != 4:
        raise ShapeError(f"{k} expects NCHW input, got {s}")
    if k == "conv2d":
        if s[1] != a["in_ch"]:
            raise ShapeError(f"conv2d expects {a['in_ch']} channels, got {s[1]}")
        h = _conv_out(s[2], a["kernel"], a["stride"], a["padding"])
        w = _conv_out(s[3], a["kernel"], a["stride"], a["padding"])
        if h < 1 or w < 1:
            raise ShapeError(f"conv2d output collapses for input {s}")
        return (s[0], a["out_ch"], h, w)
    if k == "dwconv2d":
        if s[1] != a["channels"]:
            raise ShapeError(f"dwconv2d expects {a['channels']} channels, got {s[1]}")
        h = _conv_out(s[2], a["kernel"], a["stride"], a["padding"])
        w = _conv_out(s[3], a["kernel"], a["stride"], a["padding"])
        if h < 1 or w < 1:
            raise ShapeError(f"dwconv2d output collapses for input {s}")
        return (s[0], s[1], h, w)
    if k == "batchnorm":
        if len(s) not in (2, 4) or s[1] != a["channels"]:
            raise ShapeError(f"batchnorm expects {a['channels']} channels, got {s}")
        return s
    if k == "activation":
        return s
    if k == "squeeze_excite":
        if s[1] != a["channels"]:
            raise ShapeError(f"squeeze_excite expects {a['channels']} channels, got {s[1]}")
        return s
    if k == "global_avg_pool":
        return (s[0], s[1])
    if k == "linear":
        if len(s) != 2 or s[1] != a["in_features"]:
            raise ShapeError(f"linear expects (N, {a['in_features']}), got {s}")
        return (s[0], a["out_features"])
    if k in LOSS_KINDS:
        return ()
    raise ShapeError(f"no shape rule for {k}")


# -- activations -------------------------------------------------------------

def _act_forward(fn: str, x: np.ndarray) -> tuple[np.ndarray, Any]:
    if fn == "relu":
        return np.maximum(x, 0), x > 0
    s = expit(x)
    if fn == "sigmoid":
        return s, s
    return x * s, (x, s)


def _act_backward(fn: str, cache: Any, g: np.ndarray) -> np.ndarray:
    if fn == "relu":
        return g * cache
    if fn == "sigmoid":
        return g * cache * (1 - cache)
    x, s = cache
    return g * (s * (1 + x * (1 - s)))


# -- convolutions ------------------------------------------------------------

def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_fwd(spec, xs, p, mode, buf):
    x = xs[0]
    a = spec.attrs
    w = p["weight"]
    k, s, pad = a["kernel"], a["stride"], a["padding"]
    n, c, h, wd = x.shape
    if k == 1 and pad == 0:
        xs_ = x[:, :, ::s, ::s] if s > 1 else x
        ho, wo = xs_.shape[2:]
        flat = np.ascontiguousarray(xs_).reshape(n, c, ho * wo)
        out = np.matmul(w.reshape(w.shape[0], c), flat).reshape(n, -1, ho, wo)
        cache = ("pointwise", flat, x.shape, (ho, wo))
    else:
        xp = _pad(x, pad)
        ho = _conv_out(h, k, s, pad)
        wo = _conv_out(wd, k, s, pad)
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]
        # cols: (N, Ho, Wo, C, k, k)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
        out = np.tensordot(cols, w, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        out = np.ascontiguousarray(out)
        cache = ("general", cols, xp.shape, (ho, wo))
    if "bias" in p:
        out = out + p["bias"][None, :, None, None]
    return out, cache


def _conv_bwd(spec, cache, g, p):
    a = spec.attrs
    w = p["weight"]
    k, s, pad = a["kernel"], a["stride"], a["padding"]
    grads = {}
    if "bias" in p:
        grads["bias"] = g.sum(axis=(0, 2, 3))
    tag, cols, xshape, (ho, wo) = cache
    n = g.shape[0]
    o = w.shape[0]
    if tag == "pointwise":
        gf = g.reshape(n, o, ho * wo)
        w2 = w.reshape(o, -1)
        grads["weight"] = np.tensordot(gf, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        dx_s = np.matmul(w2.T, gf).reshape(n, -1, ho, wo)
        if s > 1:
            dx = np.zeros(xshape, dtype=g.dtype)
            dx[:, :, ::s, ::s] = dx_s
        else:
            dx = dx_s
        return [dx], grads
    gt = g.transpose(0, 2, 3, 1)  # N, Ho, Wo, O
    grads["weight"] = np.tensordot(gt, cols, axes=([0, 1, 2], [0, 1, 2]))
    dcols = np.tensordot(gt, w, axes=([3], [0]))  # N, Ho, Wo, C, k, k
    dxp = np.zeros(xshape, dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dcols[..., i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad : xshape[2] - pad, pad : xshape[3] - pad] if pad else dxp
    return [dx], grads


def _dw_fwd(spec, xs, p, mode, buf):
    x = xs[0]
    a = spec.attrs
    w = p["weight"]
    k, s, pad = a["kernel"], a["stride"], a["padding"]
    xp = _pad(x, pad)
    n, c, h, wd = x.shape
    ho = _conv_out(h, k, s, pad)
    wo = _conv_out(wd, k, s, pad)
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] * w[None, :, i, j, None, None]
    return out, (xp, (ho, wo))


def _dw_bwd(spec, cache, g, p):
    a = spec.attrs
    w = p["weight"]
    k, s, pad = a["kernel"], a["stride"], a["padding"]
    xp, (ho, wo) = cache
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(k):
        for j in range(k):
            sl = (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))
            dw[:, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
            dxp[sl] += g * w[None, :, i, j, None, None]
    dx = dxp[:, :, pad : xp.shape[2] - pad, pad : xp.shape[3] - pad] if pad else dxp
    return [dx], {"weight": dw}


# -- normalization -----------------------------------------------------------

def _bn_axes(x):
    return (0,) if x.ndim == 2 else (0, 2, 3)


def _bshape(x):
    return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)


def _bn_fwd(spec, xs, p, mode, buf):
    x = xs[0]
    a = spec.attrs
    eps = a.get("eps", 1e-5)
    axes = _bn_axes(x)
    bs = _bshape(x)
    if mode == "train":
        mean = x.mean(axis=axes)
        xc = x - mean.reshape(bs)
        var = (xc * xc).mean(axis=axes)
        if buf is not None:
            m = a.get("momentum", 0.9)
            count = x.size // x.shape[1]
            unbiased = var * count / max(count - 1, 1)
            buf["running_mean"][...] = m * buf["running_mean"] + (1 - m) * mean
            buf["running_var"][...] = m * buf["running_var"] + (1 - m) * unbiased
    else:
        mean = buf["running_mean"].astype(x.dtype)
        var = buf["running_var"].astype(x.dtype)
        xc = x - mean.reshape(bs)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv.reshape(bs)
    out = xhat * p["weight"].reshape(bs) + p["bias"].reshape(bs)
    return out, (mode, xhat, inv)


def _bn_bwd(spec, cache, g, p):
    mode, xhat, inv = cache
    axes = _bn_axes(g)
    bs = _bshape(g)
    grads = {"weight": (g * xhat).sum(axis=axes), "bias": g.sum(axis=axes)}
    gx = g * p["weight"].reshape(bs)
    if mode == "train":
        mean_g = gx.mean(axis=axes).reshape(bs)
        mean_gx = (gx * xhat).mean(axis=axes).reshape(bs)
        dx = (gx - mean_g - xhat * mean_gx) * inv.reshape(bs)
    else:
        dx = gx * inv.reshape(bs)
    return [dx], grads


# -- squeeze-excite, pooling, linear -----------------------------------------

def _se_fwd(spec, xs, p, mode, buf):
    x = xs[0]
    fn = spec.get("fn", "swish")
    pooled = x.mean(axis=(2, 3))  # N, C
    z = pooled @ p["reduce"].T  # N, R
    za, acache = _act_forward(fn, z)
    e = za @ p["expand"].T  # N, C
    gate = expit(e)
    out = x * gate[:, :, None, None]
    return out, (x, pooled, za, acache, gate)


def _se_bwd(spec, cache, g, p):
    fn = spec.get("fn", "swish")
    x, pooled, za, acache, gate = cache
    dx = g * gate[:, :, None, None]
    dgate = np.einsum("nchw,nchw->nc", g, x)
    de = dgate * gate * (1 - gate)
    d_expand = de.T @ za
    dza = de @ p["expand"]
    dz = _act_backward(fn, acache, dza)
    d_reduce = dz.T @ pooled
    dpooled = dz @ p["reduce"]
    hw = x.shape[2] * x.shape[3]
    dx = dx + (dpooled / hw)[:, :, None, None]
    return [dx], {"reduce": d_reduce, "expand": d_expand}


def _gap_fwd(spec, xs, p, mode, buf):
    x = xs[0]
    return x.mean(axis=(2, 3)), x.shape


def _gap_bwd(spec, cache, g, p):
    shape = cache
    hw = shape[2] * shape[3]
    return [np.broadcast_to((g / hw)[:, :, None, None], shape).copy()], {}


def _linear_fwd(spec, xs, p, mode, buf):
    x = xs[0]
    out = x @ p["weight"].T
    if "bias" in p:
        out = out + p["bias"]
    return out, x


def _linear_bwd(spec, cache, g, p):
    x = cache
    grads = {"weight": g.T @ x}
    if "bias" in p:
        grads["bias"] = g.sum(axis=0)
    return [g @ p["weight"]], grads


def _act_fwd(spec, xs, p, mode, buf):
    return _act_forward(spec["fn"], xs[0])


def _act_bwd(spec, cache, g, p):
    return [_act_backward(spec["fn"], cache, g)], {}


def _add_fwd(spec, xs, p, mode, buf):
    return xs[0] + xs[1], None


def _add_bwd(spec, cache, g, p):
    return [g, g], {}


# -- losses (second input is the target) -------------------------------------

def _mse_fwd(spec, xs, p, mode, buf):
    pred, target = xs
    diff = pred - target
    return np.asarray(np.mean(diff * diff), dtype=pred.dtype), diff


def _mse_bwd(spec, cache, g, p):
    diff = cache
    return [g * 2.0 * diff / diff.size], {}


def _ce_fwd(spec, xs, p, mode, buf):
    logits, labels = xs
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    return np.asarray(loss, dtype=logits.dtype), (logp, labels)


def _ce_bwd(spec, cache, g, p):
    logp, labels = cache
    n = logp.shape[0]
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return [g * d / n], {}


@dataclass(frozen=True)
class _Kernel:
    forward: Callable
    backward: Callable


KERNELS: dict[str, _Kernel] = {
    "conv2d": _Kernel(_conv_fwd, _conv_bwd),
    "dwconv2d": _Kernel(_dw_fwd, _dw_bwd),
    "batchnorm": _Kernel(_bn_fwd, _bn_bwd),
    "activation": _Kernel(_act_fwd, _act_bwd),
    "squeeze_excite": _Kernel(_se_fwd, _se_bwd),
    "global_avg_pool": _Kernel(_gap_fwd, _gap_bwd),
    "linear": _Kernel(_linear_fwd, _linear_bwd),
    "add": _Kernel(_add_fwd, _add_bwd),
    "mse_loss": _Kernel(_mse_fwd, _mse_bwd),
    "softmax_ce": _Kernel(_ce_fwd, _ce_bwd),
}
