"""Shared fixtures that are plain functions (importable from any test module)."""
import numpy as np

from dnanas.evaluate import EvalRecord, PathRanking
from dnanas.search import Constraint


def random_instance(seed: int, max_blocks: int = 4, max_entries: int = 50, min_blocks: int = 1, min_entries: int = 1):
    """Random loss/cost pools with deliberate loss ties, plus a bound between the cheapest and dearest model."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(min_blocks, max_blocks + 1))
    rankings = []
    for b in range(n):
        m = int(rng.integers(min_entries, max_entries + 1))
        decimals = int(rng.integers(1, 4))
        losses = np.round(rng.uniform(0, 1, m), decimals)
        costs = rng.integers(1, 40, size=(m, 2))
        rankings.append(PathRanking(b, [EvalRecord(b, int(k % 2), (int(k),), float(losses[k]), int(costs[k, 0]),
                                                   int(costs[k, 1])) for k in range(m)]))
    metric = "params" if rng.integers(2) else "madds"
    col = 0 if metric == "params" else 1
    lo = sum(min(r.params if col == 0 else r.madds for r in rk) for rk in rankings)
    hi = sum(max(r.params if col == 0 else r.madds for r in rk) for rk in rankings)
    bound = None if rng.uniform() < 0.1 else int(rng.integers(lo, hi + 1))
    return rankings, Constraint(metric, bound)


def tau_b_pairs(x, y) -> float:
    """Kendall tau-b by direct pair counting."""
    n = len(x)
    conc = disc = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = np.sign(x[i] - x[j])
            dy = np.sign(y[i] - y[j])
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif dx == dy:
                conc += 1
            else:
                disc += 1
    return (conc - disc) / np.sqrt((conc + disc + tx) * (conc + disc + ty))


RESULTS: list[tuple[int, str, bool, str]] = []


class criterion:
    """Context manager that records one acceptance criterion's verdict for the terminal summary."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        detail = "; ".join(self.details)
        if exc is not None:
            detail = f"{detail}; {type(exc).__name__}: {exc}".lstrip("; ")
        RESULTS.append((self.number, self.title, exc is None, detail))
        print(f"criterion {self.number:>2} {'PASS' if exc is None else 'FAIL'}  {self.title}  [{detail}]")
        return False
