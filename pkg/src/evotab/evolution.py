"""NSGA-II selection over generator individuals.

Both objectives are minimized: ``(clip_risk(f_r), -f_u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

RISK_FLOOR = 0.0


@dataclass(eq=False)
class Individual:
    generator: Any
    adam_state: Any = None
    f_u: float = math.nan
    f_r: float = math.nan
    rank: int | None = None
    crowd: float | None = None
    uid: int = 0
    # set on children by the variation step
    action: int | None = None
    reward: int | None = None
    loss: float | None = None

    def objectives(self, risk_floor: float = RISK_FLOOR) -> tuple[float, float]:
        return objective_vector(self.f_u, self.f_r, risk_floor)


def clip_risk(f_r: float, floor: float = RISK_FLOOR) -> float:
    return max(f_r, floor)


def objective_vector(f_u: float, f_r: float, risk_floor: float = RISK_FLOOR) -> tuple[float, float]:
    if not (math.isfinite(f_u) and math.isfinite(f_r)):
        raise ValueError(f"objectives must be finite, got f_u={f_u}, f_r={f_r}")
    return (clip_risk(f_r, risk_floor), -f_u)


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    strictly = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            strictly = True
    return strictly


def _as_points(items, risk_floor: float) -> list[tuple[float, ...]]:
    return [it.objectives(risk_floor) if isinstance(it, Individual) else tuple(it) for it in items]


def fast_non_dominated_sort(points: Sequence[Sequence[float]]) -> list[list[int]]:
    n = len(points)
    dominated_by = [[] for _ in range(n)]
    counts = [0] * n
    fronts: list[list[int]] = [[]]
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(points[p], points[q]):
                dominated_by[p].append(q)
            elif dominates(points[q], points[p]):
                counts[p] += 1
        if counts[p] == 0:
            fronts[0].append(p)
    while fronts[-1]:
        nxt = []
        for p in fronts[-1]:
            for q in dominated_by[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    nxt.append(q)
        fronts.append(sorted(nxt))
    fronts.pop()
    return fronts


def non_dominated_sort(pop: Sequence, risk_floor: float = RISK_FLOOR) -> list[list[int]]:
    """Fronts as lists of indices into ``pop``; Individuals get 1-based ranks written back."""
    if not pop:
        return []
    fronts = fast_non_dominated_sort(_as_points(pop, risk_floor))
    for r, front in enumerate(fronts, start=1):
        for i in front:
            if isinstance(pop[i], Individual):
                pop[i].rank = r
    return fronts


def crowding_distance(front: Sequence, risk_floor: float = RISK_FLOOR) -> np.ndarray:
    points = np.asarray(_as_points(front, risk_floor), dtype=np.float64)
    n = len(points)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
    else:
        for k in range(points.shape[1]):
            order = np.argsort(points[:, k], kind="stable")
            lo, hi = points[order[0], k], points[order[-1], k]
            if hi == lo:
                # a flat objective carries no spacing information
                continue
            dist[order[0]] = dist[order[-1]] = np.inf
            span = hi - lo
            for pos in range(1, n - 1):
                dist[order[pos]] += (points[order[pos + 1], k] - points[order[pos - 1], k]) / span
    for ind, d in zip(front, dist):
        if isinstance(ind, Individual):
            ind.crowd = float(d)
    return dist


def select_survivors(parents: Sequence[Individual], children: Sequence[Individual], risk_floor: float = RISK_FLOOR):
    """Keep the best ``len(parents)`` of parents + children by (rank, -crowding, pool index)."""
    pool = list(parents) + list(children)
    fronts = non_dominated_sort(pool, risk_floor)
    rank = np.empty(len(pool), dtype=np.int64)
    crowd = np.empty(len(pool))
    for r, front in enumerate(fronts, start=1):
        rank[front] = r
        crowd[front] = crowding_distance([pool[i] for i in front], risk_floor)
    order = sorted(range(len(pool)), key=lambda i: (rank[i], -crowd[i], i))
    return [pool[i] for i in order[:len(parents)]]
