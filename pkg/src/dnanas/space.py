"""Search-space structure and the pure accounting over it."""
from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

from .engine import Graph, INPUT, act, batchnorm, conv, dwconv, linear, squeeze_excite
from .engine.layers import LayerSpec

MAX_PATHS = 10**7


class InvalidEncodingError(ValueError):
    """Architecture encoding does not fit the config; ``block``/``layer`` locate the first problem."""

    def __init__(self, message: str, block: int | None = None, layer: int | None = None):
        super().__init__(message)
        self.block = block
        self.layer = layer


class PathOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class OpSpec:
    kernel: int
    expansion: int
    se_ratio: float = 0.25

    def __post_init__(self):
        if self.kernel not in (3, 5, 7) or self.expansion not in (3, 6):
            raise ValueError(f"unsupported op k={self.kernel} e={self.expansion}")

    @property
    def label(self) -> str:
        return f"k{self.kernel}e{self.expansion}"


@dataclass(frozen=True)
class CellSpec:
    layers: int
    width: int

    def __post_init__(self):
        if self.layers < 1 or self.width < 1:
            raise ValueError(f"cell needs layers >= 1 and width >= 1, got {self}")


@dataclass(frozen=True)
class BlockSpec:
    index: int
    cells: tuple[CellSpec, ...]
    teacher_in_width: int
    teacher_out_width: int
    stride: int
    in_size: int
    teacher_layers: int = 3
    student_out_width: int | None = None

    def __post_init__(self):
        if not self.cells:
            raise ValueError(f"block {self.index} has no cells")
        if self.student_out_width is None:
            object.__setattr__(self, "student_out_width", max(c.width for c in self.cells))

    @property
    def out_size(self) -> int:
        return (self.in_size - 1) // self.stride + 1


@dataclass(frozen=True)
class SupernetConfig:
    blocks: tuple[BlockSpec, ...]
    ops: tuple[OpSpec, ...]
    input_size: int = 32
    input_channels: int = 3
    num_classes: int = 10
    stem_width: int = 16
    student_stem_width: int = 8
    activation: str = "swish"
    loss_weights: tuple[float, ...] | None = None
    seed: int = 0
    name: str = "supernet"

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("config needs at least one block")
        if len(self.ops) < 1:
            raise ValueError("config needs at least one candidate op")
        size, width = self.input_size, self.stem_width
        for i, b in enumerate(self.blocks):
            if b.index != i:
                raise ValueError(f"block {i} carries index {b.index}")
            if b.in_size != size:
                raise ValueError(f"block {i} expects spatial size {b.in_size}, chain gives {size}")
            if b.teacher_in_width != width:
                raise ValueError(f"block {i} expects {b.teacher_in_width} input channels, chain gives {width}")
            size, width = b.out_size, b.teacher_out_width
        if self.loss_weights is None:
            object.__setattr__(self, "loss_weights", tuple(1.0 for _ in self.blocks))
        elif len(self.loss_weights) != len(self.blocks):
            raise ValueError("one loss weight per block required")

    @property
    def n_ops(self) -> int:
        return len(self.ops)

    def block_in_width(self, i: int) -> int:
        """Stand-alone input width of block ``i``."""
        return self.student_stem_width if i == 0 else self.blocks[i - 1].student_out_width

    @classmethod
    def build(cls, *, teacher_widths: Sequence[int], strides: Sequence[int], cells: Sequence[Sequence[tuple[int, int]]],
              ops: Sequence[tuple[int, int]], input_size: int = 32, stem_width: int = 16, se_ratio: float = 0.25,
              teacher_layers: Sequence[int] | None = None, student_out_widths: Sequence[int | None] | None = None,
              **kw) -> "SupernetConfig":
        blocks = []
        size, width = input_size, stem_width
        for i, (tw, s, cs) in enumerate(zip(teacher_widths, strides, cells)):
            b = BlockSpec(
                index=i,
                cells=tuple(CellSpec(d, w) for d, w in cs),
                teacher_in_width=width,
                teacher_out_width=tw,
                stride=s,
                in_size=size,
                teacher_layers=teacher_layers[i] if teacher_layers else 3,
                student_out_width=student_out_widths[i] if student_out_widths else None,
            )
            blocks.append(b)
            size, width = b.out_size, tw
        return cls(blocks=tuple(blocks), ops=tuple(OpSpec(k, e, se_ratio) for k, e in ops), input_size=input_size,
                   stem_width=stem_width, **kw)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "input_size": self.input_size,
            "input_channels": self.input_channels,
            "num_classes": self.num_classes,
            "stem_width": self.stem_width,
            "student_stem_width": self.student_stem_width,
            "activation": self.activation,
            "se_ratio": self.ops[0].se_ratio,
            "ops": [[o.kernel, o.expansion] for o in self.ops],
            "blocks": [
                {
                    "teacher_width": b.teacher_out_width,
                    "stride": b.stride,
                    "teacher_layers": b.teacher_layers,
                    "student_out_width": b.student_out_width,
                    "cells": [[c.layers, c.width] for c in b.cells],
                }
                for b in self.blocks
            ],
            "loss_weights": list(self.loss_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SupernetConfig":
        known = {"name", "seed", "input_size", "input_channels", "num_classes", "stem_width", "student_stem_width",
                 "activation", "se_ratio", "ops", "blocks", "loss_weights"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown search-space keys: {sorted(unknown)}")
        blocks = d["blocks"]
        return cls.build(
            teacher_widths=[b["teacher_width"] for b in blocks],
            strides=[b.get("stride", 1) for b in blocks],
            cells=[[tuple(c) for c in b["cells"]] for b in blocks],
            teacher_layers=[b.get("teacher_layers", 3) for b in blocks],
            student_out_widths=[b.get("student_out_width") for b in blocks],
            ops=[tuple(o) for o in d["ops"]],
            input_size=d.get("input_size", 32),
            stem_width=d.get("stem_width", 16),
            se_ratio=d.get("se_ratio", 0.25),
            input_channels=d.get("input_channels", 3),
            num_classes=d.get("num_classes", 10),
            student_stem_width=d.get("student_stem_width", 8),
            activation=d.get("activation", "swish"),
            loss_weights=tuple(d["loss_weights"]) if d.get("loss_weights") else None,
            seed=d.get("seed", 0),
            name=d.get("name", "supernet"),
        )


def desk_config(**kw) -> SupernetConfig:
    """Three blocks at 32x32 input; two cells per block at half the teacher width; four ops."""
    return SupernetConfig.build(
        teacher_widths=[16, 32, 64],
        strides=[2, 2, 2],
        cells=[[(2, 8), (3, 8)], [(2, 16), (3, 16)], [(2, 32), (3, 32)]],
        ops=[(3, 3), (3, 6), (5, 3), (5, 6)],
        input_size=kw.pop("input_size", 32),
        stem_width=16,
        name=kw.pop("name", "desk"),
        **kw,
    )


def table1_config(n_ops: int = 6) -> SupernetConfig:
    """The ImageNet-scale supernet (six blocks, three cells in the first five)."""
    ops = [(3, 3), (3, 6), (5, 3), (5, 6), (7, 3), (7, 6)] if n_ops == 6 else [(3, 3), (3, 6), (5, 3), (5, 6)]
    return SupernetConfig.build(
        teacher_widths=[48, 80, 160, 224, 384, 640],
        strides=[2, 2, 2, 1, 2, 1],
        cells=[
            [(2, 24), (3, 24), (2, 32)],
            [(2, 40), (3, 40), (4, 40)],
            [(2, 80), (3, 80), (4, 80)],
            [(3, 112), (4, 112), (4, 96)],
            [(4, 192), (5, 192), (5, 160)],
            [(1, 320)],
        ],
        teacher_layers=[7, 7, 10, 10, 13, 4],
        ops=ops,
        input_size=112,
        stem_width=32,
        student_stem_width=16,
        num_classes=1000,
        name="table1",
    )


# -- accounting --------------------------------------------------------------

def enumerate_paths(cell: CellSpec, n_ops: int) -> list[tuple[int, ...]]:
    """All op-index sequences for ``cell`` in lexicographic order."""
    if n_ops ** cell.layers > MAX_PATHS:
        raise PathOverflowError(f"{n_ops}^{cell.layers} paths exceed the {MAX_PATHS} cap")
    return list(itertools.product(range(n_ops), repeat=cell.layers))


def block_size(config: SupernetConfig, i: int) -> int:
    return sum(config.n_ops ** c.layers for c in config.blocks[i].cells)


def space_size(config: SupernetConfig) -> int:
    return math.prod(block_size(config, i) for i in range(len(config.blocks)))


def drop_rate(config: SupernetConfig, block_index: int) -> Fraction:
    if not 0 <= block_index < len(config.blocks):
        raise IndexError(f"block index {block_index} out of range")
    return Fraction(block_size(config, block_index), space_size(config))


# -- architecture encodings --------------------------------------------------

@dataclass(frozen=True)
class BlockChoice:
    cell: int
    ops: tuple[int, ...]


@dataclass(frozen=True)
class ArchEncoding:
    choices: tuple[BlockChoice, ...]

    @classmethod
    def of(cls, *pairs: tuple[int, Sequence[int]]) -> "ArchEncoding":
        return cls(tuple(BlockChoice(c, tuple(ops)) for c, ops in pairs))

    def __iter__(self) -> Iterator[BlockChoice]:
        return iter(self.choices)

    def __len__(self) -> int:
        return len(self.choices)

    def __getitem__(self, i: int) -> BlockChoice:
        return self.choices[i]

    def key(self) -> str:
        return "|".join(f"c{ch.cell}:{'-'.join(map(str, ch.ops))}" for ch in self.choices)

    @classmethod
    def from_key(cls, key: str) -> "ArchEncoding":
        pairs = []
        for part in key.split("|"):
            cell, ops = part.split(":")
            pairs.append((int(cell[1:]), [int(o) for o in ops.split("-")] if ops else []))
        return cls.of(*pairs)

    def to_dict(self) -> dict:
        return {"blocks": [{"block": i, "cell": ch.cell, "ops": list(ch.ops)} for i, ch in enumerate(self.choices)]}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchEncoding":
        blocks = sorted(d["blocks"], key=lambda b: b["block"])
        if [b["block"] for b in blocks] != list(range(len(blocks))):
            raise InvalidEncodingError("architecture blocks must be numbered 0..N-1")
        return cls.of(*[(b["cell"], b["ops"]) for b in blocks])


def validate_encoding(config: SupernetConfig, arch: ArchEncoding) -> None:
    """Raise InvalidEncodingError naming the first offending block/layer."""
    if len(arch) != len(config.blocks):
        missing = len(arch) if len(arch) < len(config.blocks) else None
        raise InvalidEncodingError(
            f"expected {len(config.blocks)} block entries, got {len(arch)}", block=missing)
    for i, (ch, block) in enumerate(zip(arch, config.blocks)):
        if not 0 <= ch.cell < len(block.cells):
            raise InvalidEncodingError(f"block {i}: cell index {ch.cell} outside [0, {len(block.cells)})", block=i)
        d = block.cells[ch.cell].layers
        if len(ch.ops) != d:
            raise InvalidEncodingError(f"block {i}: cell {ch.cell} has {d} layers, got {len(ch.ops)} ops", block=i)
        for j, o in enumerate(ch.ops):
            if not 0 <= o < config.n_ops:
                raise InvalidEncodingError(f"block {i} layer {j}: op index {o} outside [0, {config.n_ops})",
                                           block=i, layer=j)


def block_choices(config: SupernetConfig, i: int) -> list[BlockChoice]:
    """Every (cell, path) choice of block ``i`` in canonical order."""
    out = []
    for c, cell in enumerate(config.blocks[i].cells):
        out += [BlockChoice(c, p) for p in enumerate_paths(cell, config.n_ops)]
    return out


def _decode_block(config: SupernetConfig, i: int, idx: int) -> BlockChoice:
    for c, cell in enumerate(config.blocks[i].cells):
        n = config.n_ops ** cell.layers
        if idx < n:
            ops = []
            for _ in range(cell.layers):
                idx, r = divmod(idx, config.n_ops)
                ops.append(r)
            return BlockChoice(c, tuple(reversed(ops)))
        idx -= n
    raise IndexError("block choice index out of range")


def decode_index(config: SupernetConfig, idx: int) -> ArchEncoding:
    """Map an integer in [0, space_size) to an architecture (mixed radix, block 0 most significant)."""
    sizes = [block_size(config, i) for i in range(len(config.blocks))]
    if not 0 <= idx < math.prod(sizes):
        raise IndexError(f"architecture index {idx} out of range")
    digits = []
    for s in reversed(sizes):
        idx, r = divmod(idx, s)
        digits.append(r)
    digits.reverse()
    return ArchEncoding(tuple(_decode_block(config, i, r) for i, r in enumerate(digits)))


def enumerate_space(config: SupernetConfig, cap: int = 10**5) -> Iterator[ArchEncoding]:
    total = space_size(config)
    if total > cap:
        raise PathOverflowError(f"space of {total} architectures exceeds enumeration cap {cap}")
    per_block = [block_choices(config, i) for i in range(len(config.blocks))]
    for combo in itertools.product(*per_block):
        yield ArchEncoding(tuple(combo))


def sample_architectures(config: SupernetConfig, k: int, seed: int) -> list[ArchEncoding]:
    """``k`` distinct architectures drawn uniformly without replacement."""
    total = space_size(config)
    if k > total:
        raise ValueError(f"cannot draw {k} distinct architectures from a space of {total}")
    return [decode_index(config, i) for i in random.Random(seed).sample(range(total), k)]


# -- graph builders ----------------------------------------------------------

def se_channels(op: OpSpec, in_ch: int) -> int:
    return max(1, math.ceil(op.se_ratio * in_ch))


def add_mbconv(g: Graph, x: int, prefix: str, op: OpSpec, in_ch: int, out_ch: int, stride: int,
               fn: str = "swish") -> int:
    """Inverted residual with squeeze-excite; returns the output node index."""
    mid = in_ch * op.expansion
    h = g.add(f"{prefix}.expand", conv(in_ch, mid, 1), x)
    h = g.add(f"{prefix}.bn1", batchnorm(mid), h)
    h = g.add(f"{prefix}.act1", act(fn), h)
    h = g.add(f"{prefix}.dw", dwconv(mid, op.kernel, stride), h)
    h = g.add(f"{prefix}.bn2", batchnorm(mid), h)
    h = g.add(f"{prefix}.act2", act(fn), h)
    h = g.add(f"{prefix}.se", squeeze_excite(mid, se_channels(op, in_ch), fn), h)
    h = g.add(f"{prefix}.project", conv(mid, out_ch, 1), h)
    h = g.add(f"{prefix}.bn3", batchnorm(out_ch), h)
    if stride == 1 and in_ch == out_ch:
        h = g.add(f"{prefix}.add", LayerSpec("add"), h, x)
    return h


def layer_widths(cell: CellSpec, in_width: int, out_width: int) -> list[tuple[int, int]]:
    """(in, out) channel pairs per layer: internal layers at the cell width, the last one at ``out_width``."""
    widths = []
    cur = in_width
    for j in range(cell.layers):
        nxt = out_width if j == cell.layers - 1 else cell.width
        widths.append((cur, nxt))
        cur = nxt
    return widths


def op_graph(config: SupernetConfig, prefix: str, op_index: int, in_ch: int, out_ch: int, stride: int) -> Graph:
    g = Graph()
    add_mbconv(g, INPUT, prefix, config.ops[op_index], in_ch, out_ch, stride, config.activation)
    return g


def add_stem(g: Graph, config: SupernetConfig, width: int, prefix: str = "stem") -> int:
    h = g.add(f"{prefix}.conv", conv(config.input_channels, width, 3), INPUT)
    h = g.add(f"{prefix}.bn", batchnorm(width), h)
    return g.add(f"{prefix}.act", act(config.activation), h)


def add_head(g: Graph, in_width: int, num_classes: int, prefix: str = "head") -> int:
    h = g.add(f"{prefix}.pool", LayerSpec("global_avg_pool"))
    return g.add(f"{prefix}.fc", linear(in_width, num_classes), h)


def assemble_standalone(config: SupernetConfig, arch: ArchEncoding) -> Graph:
    """Classifier graph for ``arch`` at stand-alone widths.

    Parameter names are keyed by (block, cell, layer, op), so the same naming
    doubles as the weight-sharing scheme of the one-shot baseline.
    """
    validate_encoding(config, arch)
    g = Graph()
    h = add_stem(g, config, config.student_stem_width)
    for i, (ch, b) in enumerate(zip(arch, config.blocks)):
        cell = b.cells[ch.cell]
        for j, ((ci, co), o) in enumerate(zip(layer_widths(cell, config.block_in_width(i), b.student_out_width), ch.ops)):
            h = add_mbconv(g, h, f"b{i}.c{ch.cell}.l{j}.o{o}", config.ops[o], ci, co, b.stride if j == 0 else 1,
                           config.activation)
    add_head(g, config.blocks[-1].student_out_width, config.num_classes)
    return g


def input_shape(config: SupernetConfig, batch: int = 1) -> tuple[int, int, int, int]:
    return (batch, config.input_channels, config.input_size, config.input_size)
