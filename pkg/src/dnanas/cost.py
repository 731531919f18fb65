"""Parameter and multiply-add accounting.

Multiply-adds (MACs) are what the outputs call ``madds``; "FLOPs" in the
mobile-network literature usually means the same count. Activations, pooling,
squeeze-excite gating and residual adds cost one madd per element; batchnorm is
folded into the preceding conv at inference and costs nothing.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .engine import Graph
from .engine.graph import INPUT
from .space import (ArchEncoding, BlockChoice, InvalidEncodingError, OpSpec, SupernetConfig, assemble_standalone,
                    block_choices, input_shape, layer_widths, se_channels, validate_encoding)


@dataclass(frozen=True)
class Cost:
    params: int
    madds: int

    def __add__(self, other: "Cost") -> "Cost":
        return Cost(self.params + other.params, self.madds + other.madds)

    def __sub__(self, other: "Cost") -> "Cost":
        return Cost(self.params - other.params, self.madds - other.madds)

    def metric(self, name: str) -> int:
        if name not in ("params", "madds"):
            raise ValueError(f"unknown cost metric {name!r}")
        return getattr(self, name)


ZERO = Cost(0, 0)


def _out(size: int, stride: int) -> int:
    return (size - 1) // stride + 1


def op_cost(op: OpSpec, in_width: int, out_width: int, spatial: int, stride: int) -> Cost:
    """Closed-form cost of one inverted-residual layer on a ``spatial`` x ``spatial`` input."""
    mid = op.expansion * in_width
    r = se_channels(op, in_width)
    hw_in = spatial * spatial
    hw = _out(spatial, stride) ** 2
    k2 = op.kernel ** 2
    params = in_width * mid + k2 * mid + 2 * mid * r + mid * out_width + 2 * mid + 2 * mid + 2 * out_width
    madds = (
        hw_in * in_width * mid  # expand
        + hw_in * mid  # activation
        + hw * mid * k2  # depthwise
        + hw * mid  # activation
        + hw * mid + mid * r + r + r * mid + mid + hw * mid  # SE: pool, fc, act, fc, sigmoid, gate
        + hw * mid * out_width  # project
    )
    if stride == 1 and in_width == out_width:
        madds += hw * out_width
    return Cost(params, madds)


def stem_cost(config: SupernetConfig, width: int) -> Cost:
    hw = config.input_size ** 2
    c = config.input_channels
    return Cost(9 * c * width + 2 * width, hw * width * 9 * c + hw * width)


def head_cost(in_width: int, spatial: int, num_classes: int) -> Cost:
    return Cost(in_width * num_classes + num_classes, spatial * spatial * in_width + in_width * num_classes)


@dataclass
class CostTable:
    """Stand-alone cost of every (block, cell, layer, op), plus fixed stem and head."""

    entries: dict[tuple[int, int, int, int], Cost]
    stem: Cost
    head: Cost
    config_hash: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    def choice_cost(self, block: int, choice: BlockChoice) -> Cost:
        total = ZERO
        for j, o in enumerate(choice.ops):
            key = (block, choice.cell, j, o)
            if key not in self.entries:
                raise InvalidEncodingError(f"no cost entry for block {block} cell {choice.cell} layer {j} op {o}",
                                           block=block, layer=j)
            total = total + self.entries[key]
        return total

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash} madds=multiply-adds\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["block", "cell", "layer", "op", "params", "madds"])
        w.writerow(["stem", "", "", "", self.stem.params, self.stem.madds])
        w.writerow(["head", "", "", "", self.head.params, self.head.madds])
        for (b, c, l, o), cost in sorted(self.entries.items()):
            w.writerow([b, c, l, o, cost.params, cost.madds])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CostTable":
        lines = text.splitlines()
        config_hash = ""
        if lines and lines[0].startswith("#"):
            for tok in lines[0][1:].split():
                if tok.startswith("config_hash="):
                    config_hash = tok.split("=", 1)[1]
            lines = lines[1:]
        rows = list(csv.DictReader(lines))
        entries = {}
        stem = head = ZERO
        for r in rows:
            cost = Cost(int(r["params"]), int(r["madds"]))
            if r["block"] == "stem":
                stem = cost
            elif r["block"] == "head":
                head = cost
            else:
                entries[(int(r["block"]), int(r["cell"]), int(r["layer"]), int(r["op"]))] = cost
        return cls(entries, stem, head, config_hash)


def build_cost_table(config: SupernetConfig, config_hash: str = "") -> CostTable:
    entries = {}
    for i, b in enumerate(config.blocks):
        for c, cell in enumerate(b.cells):
            size = b.in_size
            for j, (ci, co) in enumerate(layer_widths(cell, config.block_in_width(i), b.student_out_width)):
                stride = b.stride if j == 0 else 1
                for o, op in enumerate(config.ops):
                    entries[(i, c, j, o)] = op_cost(op, ci, co, size, stride)
                size = _out(size, stride)
    last = config.blocks[-1]
    return CostTable(entries, stem_cost(config, config.student_stem_width),
                     head_cost(last.student_out_width, last.out_size, config.num_classes), config_hash)


def model_cost(table: CostTable, arch: ArchEncoding) -> Cost:
    total = table.stem + table.head
    for i, ch in enumerate(arch):
        total = total + table.choice_cost(i, ch)
    return total


def count_graph(graph: Graph, in_shape: Sequence[int]) -> Cost:
    """Direct per-node count on an assembled graph (batch dimension ignored)."""
    shapes = graph.infer_shapes(tuple(in_shape))
    params = 0
    madds = 0
    for idx, node in enumerate(graph.nodes):
        spec = node.spec
        params += sum(math.prod(s) for s in spec.param_shapes().values())
        src = node.inputs[0]
        ishape = tuple(in_shape) if src == INPUT else shapes[src]
        oshape = shapes[idx]
        per_out = math.prod(oshape[1:])
        if spec.kind == "conv2d":
            madds += per_out * spec["in_ch"] * spec["kernel"] ** 2
        elif spec.kind == "dwconv2d":
            madds += per_out * spec["kernel"] ** 2
        elif spec.kind == "linear":
            madds += spec["in_features"] * spec["out_features"]
        elif spec.kind in ("activation", "add"):
            madds += per_out
        elif spec.kind == "global_avg_pool":
            madds += math.prod(ishape[1:])
        elif spec.kind == "squeeze_excite":
            c, r = spec["channels"], spec["reduced"]
            madds += math.prod(ishape[1:]) + c * r + r + r * c + c + per_out
    return Cost(params, madds)


def assembled_cost(config: SupernetConfig, arch: ArchEncoding) -> Cost:
    validate_encoding(config, arch)
    return count_graph(assemble_standalone(config, arch), input_shape(config))


def costs_by_choice(table: CostTable, config: SupernetConfig, block: int) -> Mapping[BlockChoice, Cost]:
    return {ch: table.choice_cost(block, ch) for ch in block_choices(config, block)}
