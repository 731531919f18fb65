"""Rating every path of every cell against the teacher, with prefix-sharing traversal."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from .cost import CostTable
from .data import batches
from .distill import BlockDistiller, chain
from .engine import Graph, ParameterSet, forward
from .space import BlockChoice, enumerate_paths
from .teacher import FeatureCache


class DegenerateTargetError(ValueError):
    pass


class MemoryCapError(MemoryError):
    pass


def _sigma(y: np.ndarray) -> float:
    s = float(np.std(y, dtype=np.float64))
    if not s > 0 or not np.isfinite(s):
        raise DegenerateTargetError(f"target standard deviation is {s}; relative L1 is undefined")
    return s


def relative_l1(x, y, sigma: float | None = None) -> float:
    """Mean absolute difference divided by the population std of ``y``.

    Pass ``sigma`` to normalize by a precomputed split-wide deviation instead.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    sigma = _sigma(y) if sigma is None else sigma
    if not sigma > 0:
        raise DegenerateTargetError(f"sigma must be positive, got {sigma}")
    return float(np.mean(np.abs(x.astype(np.float64) - y))) / sigma


@dataclass
class EvalStats:
    forward_calls: int = 0
    batches: int = 0


def _check_cap(layer_graphs: list[list[Graph]], x: np.ndarray, memory_cap_bytes: float | None) -> None:
    if memory_cap_bytes is None:
        return
    shapes = []
    shape = x.shape
    for per_op in layer_graphs:
        shape = per_op[0].infer_shapes(shape)[-1]
        shapes.append(shape)
    need = sum(int(np.prod(s)) for s in shapes) * x.itemsize
    if need > memory_cap_bytes:
        raise MemoryCapError(f"prefix activations need {need} bytes per batch, cap is {int(memory_cap_bytes)}; "
                             "lower the evaluation batch size")


def dfs_evaluate(layer_graphs: list[list[Graph]], params: ParameterSet, Y_prev: np.ndarray, Y_curr: np.ndarray,
                 sigma: float | None = None, batch_size: int = 128, memory_cap_bytes: float | None = None,
                 stats: EvalStats | None = None) -> dict[tuple[int, ...], float]:
    """Relative L1 of every path through one cell, sharing prefix activations.

    Each op output is computed once per prefix and kept on a stack of depth at
    most the number of layers, so a batch costs sum_k C^k op forwards instead
    of d * C^d. Losses are averaged over every element of the split.
    """
    sigma = _sigma(Y_curr) if sigma is None else sigma
    stats = stats if stats is not None else EvalStats()
    depth = len(layer_graphs)
    if depth == 0:
        raise ValueError("cell has no layers")
    _check_cap(layer_graphs, Y_prev[:batch_size], memory_cap_bytes)
    sums: dict[tuple[int, ...], float] = {}
    count = 0

    def visit(h: np.ndarray, target: np.ndarray, prefix: tuple[int, ...]):
        k = len(prefix)
        for o, g in enumerate(layer_graphs[k]):
            out, _ = forward(g, h, params, "eval", check_shapes=False)
            stats.forward_calls += 1
            path = prefix + (o,)
            if k + 1 == depth:
                sums[path] = sums.get(path, 0.0) + float(np.sum(np.abs(out.astype(np.float64) - target)))
            else:
                visit(out, target, path)

    for idx in batches(len(Y_prev), batch_size):
        visit(Y_prev[idx], Y_curr[idx], ())
        count += Y_curr[idx].size
        stats.batches += 1
    return {p: s / count / sigma for p, s in sorted(sums.items())}


def naive_evaluate(layer_graphs: list[list[Graph]], params: ParameterSet, Y_prev: np.ndarray, Y_curr: np.ndarray,
                   sigma: float | None = None, batch_size: int = 128,
                   stats: EvalStats | None = None) -> dict[tuple[int, ...], float]:
    """Reference: run every path from scratch."""
    sigma = _sigma(Y_curr) if sigma is None else sigma
    stats = stats if stats is not None else EvalStats()
    out = {}
    for path in enumerate_paths_for(layer_graphs):
        g = chain(layer_graphs, path)
        total = 0.0
        for idx in batches(len(Y_prev), batch_size):
            y, _ = forward(g, Y_prev[idx], params, "eval")
            stats.forward_calls += len(path)
            total += float(np.sum(np.abs(y.astype(np.float64) - Y_curr[idx])))
        out[path] = total / Y_curr.size / sigma
    return out


def enumerate_paths_for(layer_graphs: list[list[Graph]]) -> list[tuple[int, ...]]:
    return list(product(*[range(len(per_op)) for per_op in layer_graphs]))


@dataclass(frozen=True)
class EvalRecord:
    block: int
    cell: int
    path: tuple[int, ...]
    loss: float
    params: int = 0
    madds: int = 0

    @property
    def choice(self) -> BlockChoice:
        return BlockChoice(self.cell, self.path)

    def sort_key(self) -> tuple:
        return (self.loss, self.params, self.madds, self.cell, self.path)


@dataclass
class PathRanking:
    """All paths of one block, ascending by loss; ties go to lower cost, then lexicographic (cell, path)."""

    block: int
    records: list[EvalRecord]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.records = sorted(self.records, key=EvalRecord.sort_key)
        if any(r.block != self.block for r in self.records):
            raise ValueError("all records must belong to the ranking's block")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i: int) -> EvalRecord:
        return self.records[i]

    def loss_of(self, choice: BlockChoice) -> float:
        for r in self.records:
            if r.cell == choice.cell and r.path == tuple(choice.ops):
                return r.loss
        raise KeyError(f"block {self.block} ranking has no entry for cell {choice.cell} path {choice.ops}")


def rank_block(distiller: BlockDistiller, cache: FeatureCache, cost_table: CostTable | None = None,
               split: str = "val", batch_size: int = 128, memory_cap_bytes: float | None = None) -> PathRanking:
    """Score every (cell, path) of a trained block on ``split`` and sort."""
    i = distiller.block
    Y_prev = cache.get(split, i)
    Y_curr = cache.get(split, i + 1)
    sigma = cache.sigma(split, i + 1)
    if not sigma > 0:
        raise DegenerateTargetError(f"Y_{i + 1} on {split} has zero variance")
    records = []
    space = distiller.space_
    for c, layers in enumerate(distiller.layer_graphs_):
        losses = dfs_evaluate(layers, distiller.params_, Y_prev, Y_curr, sigma, batch_size, memory_cap_bytes)
        for path in enumerate_paths(space.blocks[i].cells[c], space.n_ops):
            cost = cost_table.choice_cost(i, BlockChoice(c, path)) if cost_table is not None else None
            records.append(EvalRecord(i, c, path, losses[path], cost.params if cost else 0, cost.madds if cost else 0))
    return PathRanking(i, records)


CSV_FIELDS = ["block", "cell", "path", "rel_l1", "params", "madds"]


def rankings_to_csv(rankings: Sequence[PathRanking]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for rk in rankings:
        for r in rk:
            w.writerow([r.block, r.cell, "-".join(map(str, r.path)), repr(r.loss), r.params, r.madds])
    return buf.getvalue()


def rankings_from_csv(text: str) -> list[PathRanking]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and set(CSV_FIELDS) - set(rows[0]):
        raise ValueError(f"ranking CSV must have columns {CSV_FIELDS}")
    by_block: dict[int, list[EvalRecord]] = {}
    for r in rows:
        b = int(r["block"])
        path = tuple(int(o) for o in r["path"].split("-")) if r["path"] else ()
        by_block.setdefault(b, []).append(EvalRecord(b, int(r["cell"]), path, float(r["rel_l1"]),
                                                     int(r["params"]), int(r["madds"])))
    return [PathRanking(b, recs) for b, recs in sorted(by_block.items())]
