"""Constrained architecture search over per-block rankings."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cost import ZERO, Cost, CostTable
from .evaluate import EvalRecord, PathRanking
from .space import ArchEncoding, BlockChoice

BRUTE_FORCE_CAP = 10**7
# partial-sum reassociation can move a float sum by a few ulps; the loss bound prunes only beyond this
_SLACK = 1e-12


class NoFeasibleModel(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    metric: str = "madds"
    bound: int | None = None

    def __post_init__(self):
        if self.metric not in ("params", "madds"):
            raise ValueError(f"metric must be params or madds, got {self.metric!r}")
        if self.bound is not None and math.isinf(self.bound):
            object.__setattr__(self, "bound", None)
        if self.bound is not None and not self.bound > 0:
            raise ValueError(f"bound must be positive, got {self.bound}")

    @property
    def active(self) -> bool:
        return self.bound is not None


@dataclass(frozen=True)
class SearchResult:
    arch: ArchEncoding
    loss: float
    cost: Cost
    visited: int
    proof: str = "exact"

    def to_dict(self, metric: str | None = None) -> dict:
        d = self.arch.to_dict()
        d.update({"loss": self.loss, "params": self.cost.params, "madds": self.cost.madds,
                  "visited": self.visited, "proof": self.proof})
        if metric is not None:
            d["metric"] = metric
        return d

    def to_json(self, metric: str | None = None) -> str:
        return json.dumps(self.to_dict(metric), indent=2, sort_keys=True) + "\n"


def _pools(rankings: Sequence[PathRanking]) -> list[list[EvalRecord]]:
    if not rankings:
        raise ValueError("need at least one block ranking")
    pools = [list(r.records) for r in rankings]
    for i, p in enumerate(pools):
        if not p:
            raise ValueError(f"block {i} ranking is empty")
    return pools


def _weights(lam: Sequence[float] | None, n: int) -> list[float]:
    lam = [1.0] * n if lam is None else [float(x) for x in lam]
    if len(lam) != n or any(not x > 0 for x in lam):
        raise ValueError(f"need {n} positive block weights, got {lam}")
    return lam


def _entry_cost(r: EvalRecord) -> Cost:
    return Cost(r.params, r.madds)


def _fixed(cost_table: CostTable | None) -> Cost:
    return ZERO if cost_table is None else cost_table.stem + cost_table.head


def _key(loss: float, cost: Cost, metric: str, chosen: Sequence[EvalRecord]) -> tuple:
    return (loss, cost.metric(metric), tuple((r.cell, r.path) for r in chosen))


def _result(chosen: Sequence[EvalRecord], loss: float, cost: Cost, visited: int) -> SearchResult:
    return SearchResult(ArchEncoding(tuple(BlockChoice(r.cell, r.path) for r in chosen)), loss, cost, visited)


def traversal_search(rankings: Sequence[PathRanking], cost_table: CostTable | None = None,
                     constraint: Constraint | None = None, lam: Sequence[float] | None = None) -> SearchResult:
    """Minimum weighted-loss architecture within the cost bound.

    Depth-first over loss-sorted pools. A candidate is skipped when even the
    cheapest completion breaks the bound; in the last block the first feasible
    entry closes the prefix (later entries only tie or lose); a prefix is cut
    when its loss plus the best possible remaining loss cannot beat the incumbent.
    """
    constraint = constraint or Constraint()
    pools = _pools(rankings)
    lam = _weights(lam, len(pools))
    metric, bound = constraint.metric, constraint.bound
    n = len(pools)
    min_cost = [0] * (n + 1)
    min_loss = [0.0] * (n + 1)
    for i in reversed(range(n)):
        min_cost[i] = min_cost[i + 1] + min(_entry_cost(r).metric(metric) for r in pools[i])
        min_loss[i] = min_loss[i + 1] + lam[i] * min(r.loss for r in pools[i])
    fixed = _fixed(cost_table)
    if bound is not None and fixed.metric(metric) + min_cost[0] > bound:
        raise NoFeasibleModel(f"cheapest architecture costs {fixed.metric(metric) + min_cost[0]} {metric}, "
                              f"bound is {bound}")

    best: tuple | None = None
    best_state: tuple | None = None
    visited = 0
    chosen: list[EvalRecord] = []

    def visit(i: int, loss: float, cost: Cost):
        nonlocal best, best_state, visited
        closing_loss = None
        for r in pools[i]:
            if closing_loss is not None and r.loss != closing_loss:
                break
            visited += 1
            c = cost + _entry_cost(r)
            if bound is not None and c.metric(metric) + min_cost[i + 1] > bound:
                continue
            total = loss + lam[i] * r.loss
            if best is not None and total + min_loss[i + 1] > best[0] + _SLACK * max(1.0, abs(best[0])):
                break  # pools are loss-sorted, so every later entry is cut too
            chosen.append(r)
            if i == n - 1:
                key = _key(total, c, metric, chosen)
                if best is None or key < best:
                    best, best_state = key, (list(chosen), total, c)
                closing_loss = r.loss
            else:
                visit(i + 1, total, c)
            chosen.pop()

    visit(0, 0.0, fixed)
    if best_state is None:
        raise NoFeasibleModel(f"no architecture satisfies {metric} <= {bound}")
    return _result(best_state[0], best_state[1], best_state[2], visited)


def brute_force_search(rankings: Sequence[PathRanking], cost_table: CostTable | None = None,
                       constraint: Constraint | None = None, lam: Sequence[float] | None = None,
                       cap: int = BRUTE_FORCE_CAP) -> SearchResult:
    """Exhaustive reference with the same loss summation order and tie-break.

    Every combination is scored at once with broadcasting (block 0 first, so
    the float sums match a left-to-right loop); exact ties on the optimum are
    then resolved in Python.
    """
    constraint = constraint or Constraint()
    pools = _pools(rankings)
    lam = _weights(lam, len(pools))
    total_combos = math.prod(len(p) for p in pools)
    if total_combos > cap:
        raise OverflowError(f"{total_combos} combinations exceed the brute-force cap {cap}")
    fixed = _fixed(cost_table)
    metric = constraint.metric
    loss = np.zeros(())
    cost = np.full((), fixed.metric(metric), dtype=np.int64)
    for i, p in enumerate(pools):
        loss = loss[..., None] + lam[i] * np.array([r.loss for r in p])
        cost = cost[..., None] + np.array([_entry_cost(r).metric(metric) for r in p], dtype=np.int64)
    feasible = np.ones(loss.shape, dtype=bool) if constraint.bound is None else cost <= constraint.bound
    if not feasible.any():
        raise NoFeasibleModel(f"no architecture satisfies {metric} <= {constraint.bound}")
    tied = feasible & (loss == loss[feasible].min())
    tied &= cost == cost[tied].min()
    best = None
    for idx in zip(*np.nonzero(tied)):
        combo = [p[k] for p, k in zip(pools, idx)]
        total = fixed
        for r in combo:
            total = total + _entry_cost(r)
        key = _key(float(loss[idx]), total, metric, combo)
        if best is None or key < best[0]:
            best = (key, combo, float(loss[idx]), total)
    return _result(best[1], best[2], best[3], total_combos)


def pareto_sweep(rankings: Sequence[PathRanking], cost_table: CostTable | None, bounds: Sequence[float],
                 metric: str = "madds", lam: Sequence[float] | None = None) -> list[SearchResult]:
    """One exact search per bound; bounds must be ascending."""
    bounds = list(bounds)
    if any(b2 < b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ValueError(f"bounds must be ascending, got {bounds}")
    return [traversal_search(rankings, cost_table, Constraint(metric, b), lam) for b in bounds]


def arch_loss(rankings: Sequence[PathRanking], arch: ArchEncoding, lam: Sequence[float] | None = None) -> float:
    """Weighted loss sum of ``arch`` read off the rankings, in block order."""
    lam = _weights(lam, len(rankings))
    if len(arch) != len(rankings):
        raise ValueError(f"architecture has {len(arch)} blocks, rankings have {len(rankings)}")
    loss = 0.0
    for i, (rk, ch) in enumerate(zip(rankings, arch)):
        loss = loss + lam[i] * rk.loss_of(ch)
    return loss
