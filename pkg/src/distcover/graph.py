"""Metric graphs, edge subdivision, sensing functions and gadget instances."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

TRIANGLE_RTOL = 1e-9

Edge = tuple[int, int, float]


class GraphError(ValueError):
    """Raised for malformed or non-metric graph instances."""


@dataclass(frozen=True, eq=False)
class MetricGraph:
    """Weighted vertices plus a full metric cost matrix.

    ``edges`` keeps the original adjacency when the instance came from an
    edge list; it is ``None`` for instances built directly from a metric
    (e.g. sampled environments).
    """

    weights: np.ndarray
    cost: np.ndarray
    edges: tuple[Edge, ...] | None = None

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        cost = np.array(self.cost, dtype=float)
        n = weights.shape[0]
        if weights.ndim != 1 or n == 0:
            raise GraphError("weights must be a nonempty 1-D array")
        if cost.shape != (n, n):
            raise GraphError(f"cost matrix shape {cost.shape} does not match {n} vertices")
        if not np.all(np.isfinite(cost)):
            raise GraphError("cost matrix has non-finite entries")
        if np.any(weights < 0):
            raise GraphError("vertex weights must be nonnegative")
        if np.any(cost < 0):
            raise GraphError("costs must be nonnegative")
        if np.any(np.diag(cost) != 0):
            raise GraphError("cost(u, u) must be 0")
        if not np.array_equal(cost, cost.T):
            raise GraphError("cost matrix must be symmetric")
        weights.setflags(write=False)
        cost.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "cost", cost)
        if self.edges is not None:
            object.__setattr__(self, "edges", tuple((int(u), int(v), float(c)) for u, v, c in self.edges))

    @property
    def vertex_count(self) -> int:
        return self.weights.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def min_positive_cost(self) -> float:
        off = self.cost[self.cost > 0]
        return float(off.min()) if off.size else 0.0

    def min_positive_weight(self) -> float:
        pos = self.weights[self.weights > 0]
        return float(pos.min()) if pos.size else 0.0

    def check_triangle(self, rtol: float = TRIANGLE_RTOL):
        """Return ``None`` if the triangle inequality holds, else a witness (u, v, z)."""
        return triangle_violation(self.cost, rtol)

    def to_dict(self) -> dict:
        if self.edges is not None:
            edges = self.edges
        else:
            n = self.vertex_count
            edges = [(u, v, float(self.cost[u, v])) for u in range(n) for v in range(u + 1, n)]
        return {
            "vertices": [{"id": i, "weight": float(w)} for i, w in enumerate(self.weights)],
            "edges": [{"u": u, "v": v, "cost": c} for u, v, c in edges],
            "metric": "closure",
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricGraph":
        if doc.get("metric", "closure") != "closure":
            raise GraphError(f"unsupported metric kind {doc.get('metric')!r}")
        try:
            vertices = doc["vertices"]
            edges = doc.get("edges", [])
            ids = [int(v["id"]) for v in vertices]
            if sorted(ids) != list(range(len(ids))):
                raise GraphError("vertex ids must be 0..n-1")
            weights = np.zeros(len(ids))
            for v in vertices:
                weights[int(v["id"])] = float(v["weight"])
            edge_list = [(int(e["u"]), int(e["v"]), float(e["cost"])) for e in edges]
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph document: {exc}") from exc
        return metric_closure(len(ids), edge_list, weights)

    @classmethod
    def from_json(cls, text: str) -> "MetricGraph":
        return cls.from_dict(json.loads(text))


def triangle_violation(cost: np.ndarray, rtol: float = TRIANGLE_RTOL):
    n = cost.shape[0]
    scale = float(cost.max()) if cost.size else 0.0
    atol = rtol * scale
    for z in range(n):
        via = cost[:, z, None] + cost[None, z, :]
        bad = cost > via * (1 + rtol) + atol
        if bad.any():
            u, v = np.argwhere(bad)[0]
            return int(u), int(v), z
    return None


def metric_closure(vertex_count: int, weighted_edges: Iterable[Sequence], weights) -> MetricGraph:
    """Shortest-path metric of an undirected weighted graph.

    Parallel edges keep their cheapest cost. Raises ``GraphError`` for
    nonpositive edge costs or a disconnected graph.
    """
    n = int(vertex_count)
    if n <= 0:
        raise GraphError("vertex_count must be positive")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise GraphError(f"expected {n} weights, got shape {weights.shape}")
    edges = [(int(u), int(v), float(c)) for u, v, c in weighted_edges]
    best: dict[tuple[int, int], float] = {}
    for u, v, c in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"edge ({u}, {v}) references a missing vertex")
        if not c > 0 or not np.isfinite(c):
            raise GraphError(f"edge ({u}, {v}) has nonpositive cost {c}")
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        best[key] = min(c, best.get(key, np.inf))
    if best:
        rows, cols = zip(*best.keys())
        adj = coo_matrix((list(best.values()), (rows, cols)), shape=(n, n)).tocsr()
        dist = shortest_path(adj, method="D", directed=False)
    else:
        dist = np.full((n, n), np.inf)
        np.fill_diagonal(dist, 0.0)
    if not np.all(np.isfinite(dist)):
        u, v = np.argwhere(~np.isfinite(dist))[0]
        raise GraphError(f"graph is disconnected: no path between vertices {u} and {v}")
    dist = np.minimum(dist, dist.T)
    np.fill_diagonal(dist, 0.0)
    return MetricGraph(weights, dist, tuple(edges))


def subdivide_edges(graph: MetricGraph) -> MetricGraph:
    """Split every edge (u, v) with a zero-weight midpoint vertex.

    Original vertices keep their ids; the midpoint of the e-th edge gets id
    ``n + e``. Original pairwise costs are unchanged.
    """
    if graph.edges is None:
        raise GraphError("subdivision needs an explicit edge list")
    n = graph.vertex_count
    halves = []
    for e, (u, v, c) in enumerate(graph.edges):
        z = n + e
        halves.append((u, z, c / 2))
        halves.append((z, v, c / 2))
    weights = np.concatenate([graph.weights, np.zeros(len(graph.edges))])
    out = metric_closure(n + len(graph.edges), halves, weights)
    # exact original costs; closure sums of halves may differ in the last ulp
    cost = out.cost.copy()
    cost[:n, :n] = graph.cost
    return MetricGraph(weights, cost, out.edges)


class SensingFunction:
    """Sub-additive, non-decreasing map from distance to sensing cost."""

    KINDS = ("identity", "sqrt")

    def __init__(self, kind: str = "identity"):
        if kind == "square-root":
            kind = "sqrt"
        if kind not in self.KINDS:
            raise ValueError(f"unknown sensing function {kind!r}; expected one of {self.KINDS}")
        self.kind = kind

    def __call__(self, distance):
        d = np.asarray(distance, dtype=float)
        if self.kind == "identity":
            out = d.copy()
        else:
            out = np.sqrt(d)
        return float(out) if out.ndim == 0 else out

    def __repr__(self):
        return f"SensingFunction({self.kind!r})"

    def __eq__(self, other):
        return isinstance(other, SensingFunction) and other.kind == self.kind

    def __hash__(self):
        return hash(self.kind)


IDENTITY = SensingFunction("identity")
SQRT = SensingFunction("sqrt")


def sensing_cost(f: SensingFunction, distance):
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be nonnegative")
    return f(distance)


class Gadget(NamedTuple):
    graph: MetricGraph
    bad_config: list[int]
    good_config: list[int]


def gen_gadget_instance(n: int, eps: float = 0.1, L: float = 10.0) -> Gadget:
    """City gadget on which centroid-style descent gets stuck.

    Cities 1..n sit on vertices ``0..n-1``; city 0 is the pair ``a = n`` and
    ``b = n + 1`` at cost 1. Cities are pairwise at cost ``L`` (b hangs off
    a). ``bad_config`` leaves city n served from distance ``L``;
    ``good_config`` puts one robot on every city. ``eps`` is validated only:
    it parameterizes the weight-eps construction this gadget replaces.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not L > 2:
        raise ValueError("L must exceed 2")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    a, b = n, n + 1
    hubs = list(range(n)) + [a]
    edges = [(a, b, 1.0)]
    edges += [(u, v, float(L)) for i, u in enumerate(hubs) for v in hubs[i + 1:]]
    graph = metric_closure(n + 2, edges, np.ones(n + 2))
    bad = list(range(n - 1)) + [b, a]
    good = list(range(n)) + [a]

    from .solvers import descent_baseline

    for mode in ("own-partition", "neighbor-aware"):
        res = descent_baseline(graph, len(bad), 1e-9, bad, mode=mode)
        if res.iterations:
            raise AssertionError(f"gadget bad_config is not a {mode} local optimum")
    return Gadget(graph, bad, good)
