"""Graph Voronoi partitions, coverage cost and the robot neighbor relation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import MetricGraph

DEFAULT_RADIUS_FACTOR = 4.0


def as_config(graph: MetricGraph, config: Sequence[int]) -> np.ndarray:
    """Validate a configuration (robot UID -> vertex id) and return it as an int array."""
    q = np.asarray(config, dtype=np.int64).reshape(-1)
    if q.size == 0:
        raise ValueError("configuration must contain at least one robot")
    if np.any(q < 0) or np.any(q >= graph.vertex_count):
        bad = int(q[(q < 0) | (q >= graph.vertex_count)][0])
        raise ValueError(f"invalid vertex id {bad} in configuration")
    return q


@dataclass(frozen=True, eq=False)
class PartitionAssignment:
    owner: np.ndarray   # vertex -> robot UID
    radius: np.ndarray  # robot UID -> max cost to an owned vertex

    @property
    def robot_count(self) -> int:
        return self.radius.shape[0]

    def members(self, uid: int) -> np.ndarray:
        return np.flatnonzero(self.owner == uid)


def assign_partitions(graph: MetricGraph, config: Sequence[int]) -> PartitionAssignment:
    q = as_config(graph, config)
    served = graph.cost[:, q]
    # argmin returns the first minimum, i.e. the smaller UID on ties
    owner = np.argmin(served, axis=1)
    own_cost = served[np.arange(graph.vertex_count), owner]
    radius = np.zeros(q.size)
    np.maximum.at(radius, owner, own_cost)
    owner.setflags(write=False)
    radius.setflags(write=False)
    return PartitionAssignment(owner, radius)


def service_costs(graph: MetricGraph, config: Sequence[int]) -> np.ndarray:
    """Per-vertex cost to the nearest robot."""
    q = as_config(graph, config)
    return graph.cost[:, q].min(axis=1)


def coverage_cost(graph: MetricGraph, config: Sequence[int]) -> float:
    return float(graph.weights @ service_costs(graph, config))


def neighbor_matrix(graph: MetricGraph, config: Sequence[int], partition: PartitionAssignment,
                    radius_factor: float = DEFAULT_RADIUS_FACTOR) -> np.ndarray:
    q = as_config(graph, config)
    between = graph.cost[np.ix_(q, q)]
    reach = radius_factor * np.maximum.outer(partition.radius, partition.radius)
    nb = between <= reach
    np.fill_diagonal(nb, False)
    return nb


def neighbor_sets(graph: MetricGraph, config: Sequence[int], partition: PartitionAssignment,
                  radius_factor: float = DEFAULT_RADIUS_FACTOR) -> list[frozenset[int]]:
    """Robots j with c(q_i, q_j) <= factor * max(radius_i, radius_j), self excluded."""
    nb = neighbor_matrix(graph, config, partition, radius_factor)
    return [frozenset(int(j) for j in np.flatnonzero(row)) for row in nb]
