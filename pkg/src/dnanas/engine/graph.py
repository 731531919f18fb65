"""Layer graphs with a recorded tape for reverse-mode differentiation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .layers import KERNELS, LOSS_KINDS, LayerSpec, ShapeError, infer_shape
from .params import ParameterSet

INPUT = -1
TARGET = -2


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


@dataclass(frozen=True)
class Node:
    name: str
    spec: LayerSpec
    inputs: tuple[int, ...]


@dataclass
class Graph:
    """Nodes in topological order; node inputs index earlier nodes, INPUT or TARGET.

    The last node is the graph output. Parameter names are ``<node name>.<local>``.
    """

    nodes: list[Node] = field(default_factory=list)

    def add(self, name: str, spec: LayerSpec, *inputs: int) -> int:
        if not inputs:
            inputs = (len(self.nodes) - 1 if self.nodes else INPUT,)
        for i in inputs:
            if i >= len(self.nodes) or i < TARGET:
                raise ValueError(f"node {name!r} references unknown input {i}")
        self.nodes.append(Node(name, spec, tuple(inputs)))
        return len(self.nodes) - 1

    @property
    def output(self) -> int:
        return len(self.nodes) - 1

    def __len__(self) -> int:
        return len(self.nodes)

    def extend(self, other: "Graph", at: int | None = None) -> int:
        """Append ``other`` with its INPUT rewired to node ``at`` (default: current output)."""
        if at is None:
            at = self.output if self.nodes else INPUT
        offset = len(self.nodes)
        for node in other.nodes:
            ins = tuple(at if i == INPUT else (i if i == TARGET else i + offset) for i in node.inputs)
            self.nodes.append(Node(node.name, node.spec, ins))
        return self.output

    def param_names(self) -> list[str]:
        names = []
        for node in self.nodes:
            names += [f"{node.name}.{k}" for k in node.spec.param_shapes()]
        return names

    def buffer_names(self) -> list[str]:
        names = []
        for node in self.nodes:
            names += [f"{node.name}.{k}" for k in node.spec.buffer_shapes()]
        return names

    def infer_shapes(self, input_shape: Sequence[int], target_shape: Sequence[int] | None = None) -> list[tuple[int, ...]]:
        shapes: list[tuple[int, ...]] = []
        for node in self.nodes:
            ins = []
            for i in node.inputs:
                if i == INPUT:
                    ins.append(tuple(input_shape))
                elif i == TARGET:
                    ins.append(None)
                else:
                    ins.append(shapes[i])
            if node.spec.kind in LOSS_KINDS:
                pred = ins[0]
                if node.spec.kind == "mse_loss" and target_shape is not None and tuple(target_shape) != pred:
                    raise ShapeError(f"mse target shape {tuple(target_shape)} != prediction {pred}")
                if node.spec.kind == "softmax_ce" and len(pred) != 2:
                    raise ShapeError(f"softmax_ce expects (N, K) logits, got {pred}")
                shapes.append(())
                continue
            try:
                shapes.append(infer_shape(node.spec, ins))
            except ShapeError as exc:
                raise ShapeError(f"node {node.name!r}: {exc}") from None
        return shapes

    def signature(self, input_shape: Sequence[int]) -> tuple:
        shapes = self.infer_shapes(input_shape)
        return tuple(
            (n.spec.kind, tuple(sorted(n.spec.attrs.items())), n.inputs, s) for n, s in zip(self.nodes, shapes)
        )


def init_params(graph: Graph, rng: np.random.Generator, dtype=np.float32, params: ParameterSet | None = None) -> ParameterSet:
    """Kaiming fan-in initialization for weights, ones/zeros for norm layers.

    Names already present in ``params`` are left untouched, which is how
    supernets share weights across paths.
    """
    params = ParameterSet() if params is None else params
    for node in graph.nodes:
        spec = node.spec
        for local, shape in spec.param_shapes().items():
            name = f"{node.name}.{local}"
            if name in params:
                continue
            if spec.kind == "batchnorm":
                value = np.ones(shape) if local == "weight" else np.zeros(shape)
            elif local == "bias":
                value = np.zeros(shape)
            else:
                if spec.kind == "conv2d":
                    fan_in = spec["in_ch"] * spec["kernel"] ** 2
                elif spec.kind == "dwconv2d":
                    fan_in = spec["kernel"] ** 2
                else:
                    fan_in = shape[1]
                gain = 1.0 if spec.kind == "linear" else 2.0
                value = rng.standard_normal(shape) * np.sqrt(gain / fan_in)
            params.add(name, value.astype(dtype))
        for local, shape in spec.buffer_shapes().items():
            name = f"{node.name}.{local}"
            if name in params:
                continue
            value = np.zeros(shape) if local == "running_mean" else np.ones(shape)
            params.add(name, value.astype(dtype), trainable=False)
    return params


class Tape:
    def __init__(self, graph: Graph, params: ParameterSet):
        self.graph = graph
        self.params = params
        self.caches: list = [None] * len(graph)
        self.output: np.ndarray | None = None
        self.consumed = False


def _node_params(node: Node, params: ParameterSet) -> dict[str, np.ndarray]:
    return {k: params[f"{node.name}.{k}"] for k in node.spec.param_shapes()}


def _node_buffers(node: Node, params: ParameterSet) -> dict[str, np.ndarray] | None:
    keys = node.spec.buffer_shapes()
    if not keys:
        return None
    return {k: params[f"{node.name}.{k}"] for k in keys}


def forward(graph: Graph, x: np.ndarray, params: ParameterSet, mode: str = "eval",
            target: np.ndarray | None = None, check_shapes: bool = True,
            record: bool | None = None) -> tuple[np.ndarray, Tape | None]:
    """Run ``graph`` on ``x``. In train mode (or with ``record=True``) the returned tape supports backward."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    if check_shapes:
        graph.infer_shapes(x.shape, None if target is None else np.shape(target))
    if record is None:
        record = mode == "train"
    tape = Tape(graph, params) if record else None
    values: list[np.ndarray | None] = [None] * len(graph)
    # reference counts let eval mode free activations early
    last_use = {}
    for idx, node in enumerate(graph.nodes):
        for i in node.inputs:
            if i >= 0:
                last_use[i] = idx
    for idx, node in enumerate(graph.nodes):
        ins = []
        for i in node.inputs:
            if i == INPUT:
                ins.append(x)
            elif i == TARGET:
                if target is None:
                    raise ValueError(f"node {node.name!r} needs a target")
                ins.append(target)
            else:
                ins.append(values[i])
        kernel = KERNELS[node.spec.kind]
        out, cache = kernel.forward(node.spec, ins, _node_params(node, params), mode, _node_buffers(node, params))
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite output at node {node.name!r}")
        values[idx] = out
        if tape is not None:
            tape.caches[idx] = cache
        else:
            for i in node.inputs:
                if i >= 0 and last_use.get(i) == idx:
                    values[i] = None
    out = values[-1] if graph.nodes else x
    if tape is not None:
        tape.output = out
    return out, tape


def backward(tape: Tape | None, grad_output: np.ndarray | None = None, zero_grad: bool = True) -> np.ndarray:
    """Backpropagate through ``tape``; returns the gradient w.r.t. the graph input.

    Gradients land in ``tape.params.grads`` for every parameter the tape reached;
    parameters it did not reach report zero via ``ParameterSet.grad``.
    """
    if tape is None or tape.output is None:
        raise TapeError("backward needs a tape recorded by a train-mode forward")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward")
    graph, params = tape.graph, tape.params
    if grad_output is None:
        if np.ndim(tape.output) != 0:
            raise TapeError("grad_output required for non-scalar outputs")
        grad_output = np.ones((), dtype=tape.output.dtype)
    if zero_grad:
        params.zero_grad()
    grads: list[np.ndarray | None] = [None] * len(graph)
    if not graph.nodes:
        return grad_output
    grads[-1] = np.asarray(grad_output, dtype=tape.output.dtype)
    gin = None
    for idx in range(len(graph) - 1, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        node = graph.nodes[idx]
        kernel = KERNELS[node.spec.kind]
        in_grads, p_grads = kernel.backward(node.spec, tape.caches[idx], g, _node_params(node, params))
        tape.caches[idx] = None
        grads[idx] = None
        for local, pg in p_grads.items():
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(f"non-finite gradient for {node.name}.{local}")
            params.accumulate(f"{node.name}.{local}", pg)
        for i, ig in zip(node.inputs, in_grads):
            if i == TARGET:
                continue
            if not np.all(np.isfinite(ig)):
                raise NonFiniteError(f"non-finite input gradient at node {node.name!r}")
            if i == INPUT:
                gin = ig if gin is None else gin + ig
            else:
                grads[i] = ig if grads[i] is None else grads[i] + ig
    tape.consumed = True
    return gin
