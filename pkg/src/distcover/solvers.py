"""Brute-force k-median oracle, centralized swap local search and descent baselines."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import MetricGraph
from .partition import as_config, assign_partitions, coverage_cost

BRUTE_FORCE_LIMIT = 1_000_000
DEFAULT_EPSILON = 0.01
# improvements smaller than this fraction of the largest possible cost are
# indistinguishable from floating-point noise in D
NOISE_FLOOR = 1e-9

DESCENT_MODES = ("own-partition", "neighbor-aware")


@dataclass
class SolveResult:
    config: tuple[int, ...]
    cost: float
    iterations: int = 0
    history: list[tuple[tuple[int, ...], float]] = field(default_factory=list)
    initial_cost: float | None = None

    def to_dict(self) -> dict:
        return {
            "config": list(self.config),
            "cost": self.cost,
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "history": [{"config": list(c), "cost": v} for c, v in self.history],
        }


def default_epsilon0(graph: MetricGraph, m: int, eps: float = DEFAULT_EPSILON) -> float:
    """eps * w0 * min_cost / (|V| * m), the instance-scaled improvement threshold.

    The value is raised to ``NOISE_FLOOR * total_weight * max_cost`` when the
    schedule would fall below round-off (e.g. gaussian tails with tiny
    weights), otherwise swaps that only shuffle rounding error can cycle.
    """
    w0 = graph.min_positive_weight()
    cmin = graph.min_positive_cost()
    value = eps * w0 * cmin / (graph.vertex_count * m)
    floor = NOISE_FLOOR * graph.total_weight * float(graph.cost.max())
    return max(value, floor, 1e-12)


def _tuple(q) -> tuple[int, ...]:
    return tuple(int(x) for x in q)


def brute_force_optimum(graph: MetricGraph, m: int, chunk: int = 20_000) -> SolveResult:
    """Exhaustive minimum over all vertex subsets of size min(m, |V|).

    Co-locating robots never helps, so subsets suffice; surplus robots are
    parked on the last chosen vertex. Ties go to the lexicographically
    smallest subset.
    """
    n = graph.vertex_count
    if m < 1:
        raise ValueError("m must be positive")
    k = min(m, n)
    total = math.comb(n, k)
    if total > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force over C({n}, {k}) = {total} subsets exceeds the {BRUTE_FORCE_LIMIT} guard")
    best_cost, best_combo = np.inf, None
    combos = itertools.combinations(range(n), k)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        served = graph.cost[:, block].min(axis=2)  # n x B
        costs = graph.weights @ served
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost, best_combo = float(costs[i]), block[i]
    config = _tuple(best_combo) + (int(best_combo[-1]),) * (m - k)
    return SolveResult(config, coverage_cost(graph, config))


def swap_gain(graph: MetricGraph, config: Sequence[int], out_robots, in_vertices) -> float:
    """D(Q') - D(Q) after moving robots ``out_robots`` (sorted by UID) onto ``in_vertices``."""
    out = sorted(int(r) for r in out_robots)
    ins = [int(v) for v in in_vertices]
    if len(out) != len(ins) or not out:
        raise ValueError("swap needs equally many (>= 1) robots and vertices")
    if len(set(out)) != len(out):
        raise ValueError("duplicate robot in swap")
    q = as_config(graph, config).copy()
    if max(out) >= q.size or min(out) < 0:
        raise ValueError("unknown robot UID in swap")
    before = coverage_cost(graph, q)
    q[out] = ins
    return coverage_cost(graph, q) - before


def _others_min(graph: MetricGraph, q: np.ndarray) -> np.ndarray:
    """Column r holds each vertex's service cost with robot r removed (n x m)."""
    served = graph.cost[:, q]
    if q.size == 1:
        return np.full_like(served, np.inf)
    order = np.argsort(served, axis=1, kind="stable")
    rows = np.arange(served.shape[0])
    best = served[rows, order[:, 0]]
    second = served[rows, order[:, 1]]
    out = np.repeat(best[:, None], q.size, axis=1)
    out[rows, order[:, 0]] = second
    return out


def single_swap_gains(graph: MetricGraph, config: Sequence[int]) -> np.ndarray:
    """Matrix G[r, v] = D(Q with robot r moved to v) - D(Q)."""
    q = as_config(graph, config)
    base = coverage_cost(graph, q)
    others = _others_min(graph, q)
    gains = np.empty((q.size, graph.vertex_count))
    for r in range(q.size):
        gains[r] = graph.weights @ np.minimum(others[:, r, None], graph.cost) - base
    return gains


def _first_single_swap(graph, q, eps0):
    gains = single_swap_gains(graph, q)
    for r in range(q.size):
        hits = np.flatnonzero(gains[r] <= -eps0)
        if hits.size:
            return [r], [int(hits[0])]
    return None


def _first_double_swap(graph, q, eps0):
    base = coverage_cost(graph, q)
    n = graph.vertex_count
    for r1, r2 in itertools.combinations(range(q.size), 2):
        rest = np.delete(q, [r1, r2])
        rest_min = graph.cost[:, rest].min(axis=1) if rest.size else np.full(n, np.inf)
        for v1 in range(n):
            partial = np.minimum(rest_min, graph.cost[:, v1])
            gains = graph.weights @ np.minimum(partial[:, None], graph.cost[:, v1 + 1:]) - base
            hits = np.flatnonzero(gains <= -eps0)
            if hits.size:
                return [r1, r2], [v1, v1 + 1 + int(hits[0])]
    return None


def centralized_local_search(graph: MetricGraph, m: int, p: int = 1, eps0: float | None = None,
                             init: Sequence[int] | None = None, max_moves: int = 1_000_000) -> SolveResult:
    """p-swap local search with first-improvement order (robots by UID, vertices by id).

    Stops when no swap of at most ``p`` robots improves D by ``eps0`` or more.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if eps0 is None:
        eps0 = default_epsilon0(graph, m)
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    if init is None:
        init = [r % graph.vertex_count for r in range(m)]
    q = as_config(graph, init).copy()
    if q.size != m:
        raise ValueError(f"init has {q.size} robots, expected {m}")
    cost = coverage_cost(graph, q)
    result = SolveResult(_tuple(q), cost, initial_cost=cost)
    while result.iterations < max_moves:
        move = _first_single_swap(graph, q, eps0)
        if move is None and p == 2:
            move = _first_double_swap(graph, q, eps0)
        if move is None:
            break
        robots, verts = move
        q[robots] = verts
        cost = coverage_cost(graph, q)
        result.iterations += 1
        result.history.append((_tuple(q), cost))
    result.config, result.cost = _tuple(q), cost
    return result


def descent_baseline(graph: MetricGraph, m: int, eps0: float | None = None, init: Sequence[int] | None = None,
                     mode: str = "own-partition", max_moves: int = 1_000_000) -> SolveResult:
    """Move-within-own-partition descent.

    ``own-partition`` moves a robot to the vertex of its partition minimizing
    the partition's own cost (discrete move-to-centroid). ``neighbor-aware``
    picks the partition vertex minimizing the global cost instead. Robots
    are swept by UID until a full sweep accepts nothing.
    """
    if mode not in DESCENT_MODES:
        raise ValueError(f"mode must be one of {DESCENT_MODES}")
    if eps0 is None:
        eps0 = default_epsilon0(graph, m)
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    q = as_config(graph, init).copy()
    if q.size != m:
        raise ValueError(f"init has {q.size} robots, expected {m}")
    cost = coverage_cost(graph, q)
    result = SolveResult(_tuple(q), cost, initial_cost=cost)
    w, c = graph.weights, graph.cost
    moved = True
    while moved and result.iterations < max_moves:
        moved = False
        for r in range(m):
            part = assign_partitions(graph, q)
            members = part.members(r)
            if members.size == 0:
                continue
            if mode == "own-partition":
                sub = c[np.ix_(members, members)]
                own = w[members] @ sub
                current = w[members] @ c[members, q[r]]
                k = int(np.argmin(own))
                gain = own[k] - current
            else:
                others = _others_min(graph, q)[:, r]
                totals = w @ np.minimum(others[:, None], c[:, members])
                k = int(np.argmin(totals))
                gain = totals[k] - cost
            if gain <= -eps0:
                q[r] = members[k]
                cost = coverage_cost(graph, q)
                result.iterations += 1
                result.history.append((_tuple(q), cost))
                moved = True
    result.config, result.cost = _tuple(q), cost
    return result
