import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from distcover.acceptance import locality_tuple, locality_violations
from distcover.graph import MetricGraph, gen_gadget_instance, metric_closure, subdivide_edges
from distcover.partition import assign_partitions, coverage_cost, neighbor_sets, service_costs

from oracles import coverage, owner_of

PATH = metric_closure(3, [(0, 1, 1.0), (1, 2, 1.0)], [1.0, 1.0, 1.0])


@st.composite
def instances(draw, max_n=12, max_m=4, subdivided=False):
    n = draw(st.integers(2, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2) + 0.01 * (1 - np.eye(n))
    if subdivided:
        edges = [(u, v, float(d[u, v])) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.5 or v == u + 1]
        g = subdivide_edges(metric_closure(n, edges, 1.0 - rng.random(n)))
    else:
        g = MetricGraph(1.0 - rng.random(n), d)
    m = draw(st.integers(1, max_m))
    config = [int(v) for v in rng.integers(0, n, m)]
    return g, config


def test_equidistant_vertex_goes_to_smaller_uid():
    part = assign_partitions(PATH, [0, 2])
    assert part.owner.tolist() == [0, 0, 1]
    assert part.radius.tolist() == [1.0, 0.0]


def test_single_robot_owns_everything():
    part = assign_partitions(PATH, [2])
    assert part.owner.tolist() == [0, 0, 0]
    assert part.radius.tolist() == [2.0]


def test_colocated_robots_first_uid_owns_all():
    part = assign_partitions(PATH, [1, 1])
    assert part.owner.tolist() == [0, 0, 0]
    assert part.members(1).size == 0
    assert part.radius[1] == 0.0


def test_invalid_vertex_rejected():
    with pytest.raises(ValueError, match="invalid vertex id 3"):
        assign_partitions(PATH, [0, 3])
    with pytest.raises(ValueError):
        assign_partitions(PATH, [])


def test_coverage_cost_examples():
    assert coverage_cost(PATH, [0, 1, 2]) == 0.0
    assert coverage_cost(PATH, [1]) == 2.0
    gadget = gen_gadget_instance(4, L=10.0)
    assert coverage_cost(gadget.graph, gadget.bad_config) == pytest.approx(10.0)


def test_neighbor_examples():
    assert neighbor_sets(PATH, [1], assign_partitions(PATH, [1])) == [frozenset()]
    part = assign_partitions(PATH, [0, 2])
    assert neighbor_sets(PATH, [0, 2], part) == [frozenset({1}), frozenset({0})]


def test_far_singleton_clusters_are_not_neighbors():
    # two clusters {0,1} and {2,3}: unit spread inside, 100 apart
    cost = np.array([[0, 1, 100, 101], [1, 0, 101, 102], [100, 101, 0, 1], [101, 102, 1, 0]], dtype=float)
    g = MetricGraph(np.ones(4), cost)
    part = assign_partitions(g, [0, 2])
    assert part.radius.tolist() == [1.0, 1.0]
    assert neighbor_sets(g, [0, 2], part) == [frozenset(), frozenset()]


def test_factor_two_is_stricter():
    cost = np.array([[0, 1, 3], [1, 0, 2], [3, 2, 0]], dtype=float)
    g = MetricGraph(np.ones(3), cost)
    part = assign_partitions(g, [0, 2])
    assert neighbor_sets(g, [0, 2], part, 4.0) == [frozenset({1}), frozenset({0})]
    assert neighbor_sets(g, [0, 2], part, 2.0) == [frozenset(), frozenset()]


@settings(max_examples=200, deadline=None)
@given(instances())
def test_partition_matches_oracle_and_sums_to_coverage(inst):
    g, config = inst
    part = assign_partitions(g, config)
    cost = g.cost.tolist()
    for v in range(g.vertex_count):
        assert part.owner[v] == owner_of(cost, config, v)
    by_partition = sum(g.weights[u] * g.cost[u, config[i]] for i in range(len(config)) for u in part.members(i))
    assert by_partition == pytest.approx(coverage(cost, g.weights.tolist(), config), rel=1e-12, abs=1e-15)
    assert coverage_cost(g, config) == pytest.approx(by_partition, rel=1e-12, abs=1e-15)
    for i, q in enumerate(config):
        members = part.members(i)
        expected = max((g.cost[u, q] for u in members), default=0.0)
        assert part.radius[i] == expected


@settings(max_examples=200, deadline=None)
@given(instances())
def test_neighbor_relation_symmetric_and_colocated(inst):
    g, config = inst
    nb = neighbor_sets(g, config, assign_partitions(g, config))
    for i in range(len(config)):
        assert i not in nb[i]
        for j in nb[i]:
            assert i in nb[j]
        for j in range(len(config)):
            if j != i and config[j] == config[i]:
                assert j in nb[i]


def test_within_partition_moves_leave_far_vertices_alone():
    far_total = 0
    for s in range(500):
        g, config, i, v = locality_tuple(s)
        assert locality_violations(g, config, i, v) == []
        # the oracle statement: c(z, q_j) <= c(z, v) for z owned by a non-neighbor j
        part = assign_partitions(g, config)
        nb = neighbor_sets(g, config, part)[i]
        for z in range(g.vertex_count):
            j = int(part.owner[z])
            if j != i and j not in nb:
                far_total += 1
                assert g.cost[z, config[j]] <= g.cost[z, v]
    assert far_total > 500


@settings(max_examples=300, deadline=None)
@given(instances(max_n=8, max_m=4, subdivided=True))
def test_removed_robot_is_reabsorbed_by_neighbors_on_subdivided_graphs(inst):
    g, config = inst
    assume(len(config) >= 2)
    part = assign_partitions(g, config)
    nb = neighbor_sets(g, config, part)
    for i in range(len(config)):
        rest = [j for j in range(len(config)) if j != i]
        after = assign_partitions(g, [config[j] for j in rest])
        for u in part.members(i):
            new_owner = rest[int(after.owner[u])]
            # a tie between a neighbor and a non-neighbor counts as reabsorbed
            best = min(g.cost[u, config[j]] for j in rest)
            assert new_owner in nb[i] or any(g.cost[u, config[j]] == best for j in nb[i])


def test_reabsorption_fails_on_the_raw_gadget_metric():
    # robots at a and b both have zero radius, so they are not neighbors even
    # though b's vertex falls to a when b leaves; subdivision repairs this
    gadget = gen_gadget_instance(4, L=10.0)
    g, q = gadget.graph, gadget.bad_config
    ia, ib = q.index(4), q.index(5)
    nb = neighbor_sets(g, q, assign_partitions(g, q))
    assert ia not in nb[ib]
    s = subdivide_edges(g)
    nb_sub = neighbor_sets(s, q, assign_partitions(s, q))
    assert ia in nb_sub[ib]


def test_service_costs_are_nearest_robot_costs():
    assert service_costs(PATH, [0]).tolist() == [0.0, 1.0, 2.0]
