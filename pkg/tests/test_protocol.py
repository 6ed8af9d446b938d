import json

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from distcover.acceptance import random_oracle_instance
from distcover.graph import MetricGraph, gen_gadget_instance, metric_closure
from distcover.partition import assign_partitions, coverage_cost, neighbor_sets
from distcover.protocol import (MOVE_TYPES, Message, ProtocolTrace, World, compute_delta, compute_ell, compute_ell_v,
                                compute_rho, local_move_step, protocol_graph, resolve_wave, run_distributed,
                                verify_no_improving_swap)
from distcover.solvers import brute_force_optimum, default_epsilon0

from oracles import coverage

PATH = metric_closure(3, [(0, 1, 1.0), (1, 2, 1.0)], [1.0, 1.0, 1.0])


def local(graph, config, factor=4.0):
    part = assign_partitions(graph, config)
    return graph, config, part, neighbor_sets(graph, config, part, factor)


def random_work_instance(seed, max_m=5):
    """A subdivided random instance with a random configuration on original vertices."""
    g, _, _ = random_oracle_instance(seed)
    work, movable = protocol_graph(g)
    rng = np.random.default_rng(seed + 77)
    m = int(rng.integers(2, max_m + 1))
    config = [int(v) for v in rng.integers(0, g.vertex_count, m)]
    return work, movable, config


# --- delta ---------------------------------------------------------------

def test_delta_of_current_position_is_zero():
    args = local(PATH, [0])
    assert compute_delta(*args, 0, 0) == 0.0


def test_delta_path_move_to_middle():
    assert compute_delta(*local(PATH, [0]), 0, 1) == -1.0


def test_delta_rejects_vertex_outside_partition():
    with pytest.raises(ValueError):
        compute_delta(*local(PATH, [0, 2]), 1, 0)


def test_delta_equals_global_change_on_random_tuples():
    checked = 0
    for seed in range(500):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(6, 30)), int(rng.integers(1, 8))
        pts = rng.random((n, 2)) * [3.0, 1.0]
        g = MetricGraph(1.0 - rng.random(n), np.linalg.norm(pts[:, None] - pts[None], axis=2))
        config = [int(v) for v in rng.integers(0, n, m)]
        args = local(g, config)
        part = args[2]
        i = int(rng.choice(sorted({int(o) for o in part.owner})))
        v = int(rng.choice(part.members(i)))
        moved = list(config)
        moved[i] = v
        expected = coverage(g.cost.tolist(), g.weights.tolist(), moved) - coverage(g.cost.tolist(),
                                                                                  g.weights.tolist(), config)
        assert compute_delta(*args, i, v) == pytest.approx(expected, rel=1e-9, abs=1e-12)
        checked += 1
    assert checked == 500


# --- rho -----------------------------------------------------------------

def test_rho_of_current_position_is_zero():
    assert compute_rho(*local(PATH, [0, 2]), 0, 0) == 0.0


@pytest.mark.parametrize("subdivide", [False, True])
def test_rho_gadget_city_n(subdivide):
    gadget = gen_gadget_instance(4, L=10.0)
    g, _ = protocol_graph(gadget.graph, subdivide)
    args = local(g, gadget.bad_config)
    assert args[2].owner[3] == 0
    assert compute_rho(*args, 0, 3) == pytest.approx(-10.0)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 100_000))
def test_rho_is_extra_robot_gain_on_neighbor_pool(seed):
    g, _, config = random_work_instance(seed)
    args = local(g, config)
    part, nb = args[2], args[3]
    i = int(part.owner[int(np.random.default_rng(seed).integers(0, g.vertex_count))])
    pool = [u for u in range(g.vertex_count) if int(part.owner[u]) in nb[i] | {i}]
    for v in part.members(i):
        before = g.cost[pool][:, config].min(axis=1)
        after = np.minimum(before, g.cost[pool, v])
        assert compute_rho(*args, i, int(v)) == pytest.approx(float(g.weights[pool] @ (after - before)), abs=1e-12)


def test_rho_without_self_ignores_own_partition():
    args = local(PATH, [0])
    assert compute_rho(*args, 0, 1, include_self=False) == 0.0
    assert compute_rho(*args, 0, 1, include_self=True) == -2.0


# --- ell -----------------------------------------------------------------

def test_ell_v_at_own_position_is_zero():
    args = local(PATH, [0, 2])
    assert compute_ell_v(*args, 1, 0, 2) == 0.0


def test_ell_v_gadget_backfill_costs_one():
    gadget = gen_gadget_instance(4, L=10.0)
    g, _ = protocol_graph(gadget.graph)
    args = local(g, gadget.bad_config)
    k = gadget.bad_config.index(5)
    assert compute_ell_v(*args, k, 0, 3) == pytest.approx(1.0)


def test_ell_v_needs_origin_as_neighbor():
    cost = np.array([[0, 1, 100, 101], [1, 0, 101, 102], [100, 101, 0, 1], [101, 102, 1, 0]], dtype=float)
    g = MetricGraph(np.ones(4), cost)
    with pytest.raises(ValueError):
        compute_ell_v(*local(g, [0, 2]), 1, 0, 0)


def test_ell_path_examples():
    assert compute_ell(*local(PATH, [0, 2]), 1) == 2.0
    assert compute_ell(*local(PATH, [1, 1]), 1) == 0.0
    assert compute_ell(*local(PATH, [1, 1]), 0) == 0.0


def test_ell_isolated_robot_rejected():
    with pytest.raises(ValueError, match="no neighbors"):
        compute_ell(*local(PATH, [1]), 0)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 100_000))
def test_sign_contracts(seed):
    g, _, config = random_work_instance(seed)
    args = local(g, config)
    part, nb = args[2], args[3]
    for i in range(len(config)):
        for v in part.members(i):
            assert compute_rho(*args, i, int(v)) <= 0
        for k in nb[i]:
            assert compute_ell(*args, k) >= 0
            for v in part.members(i):
                assert compute_ell_v(*args, k, i, int(v)) >= -1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 100_000))
def test_rho_plus_ell_v_is_the_two_robot_move(seed):
    g, movable, config = random_work_instance(seed)
    args = local(g, config)
    part, nb = args[2], args[3]
    pairs = [(i, k) for i in range(len(config)) for k in sorted(nb[i])]
    assume(pairs)
    base = coverage_cost(g, config)
    for i, k in pairs:
        for v in part.members(i):
            if not movable[v]:
                continue
            moved = list(config)
            moved[k], moved[i] = config[i], int(v)
            real = coverage_cost(g, moved) - base
            claimed = compute_rho(*args, i, int(v)) + compute_ell_v(*args, k, i, int(v))
            assert claimed == pytest.approx(real, rel=1e-9, abs=1e-12)


# --- local move and waves -------------------------------------------------

def test_local_move_type1_on_path():
    world = World(PATH, [0], 0.1)
    out = local_move_step(world, 0)
    assert out["outcome"] == "type1-move" and out["vertex"] == 1
    assert world.cost == 2.0 and list(world.positions) == [1]


def test_local_move_at_median_is_no_move():
    world = World(PATH, [1], 0.1)
    assert local_move_step(world, 0) == {"outcome": "no-move"}


def test_wave_rejected_leaves_configuration():
    world = World(PATH, [0, 2], 0.1)
    out = local_move_step(world, 0)
    assert out["outcome"] == "wave-rejected"
    assert list(world.positions) == [0, 2]
    assert world.trace.moves() == []
    counts = world.trace.message_counts[out["wave_id"]]
    assert counts == {"proposal": 1, "response": 1, "acknowledgment": 0}


def test_gadget_single_hop_wave():
    gadget = gen_gadget_instance(4, L=10.0)
    work, movable = protocol_graph(gadget.graph)
    world = World(work, gadget.bad_config, 0.01, movable=movable)
    out = local_move_step(world, 0)
    assert out["outcome"] == "type2-single-hop"
    k = gadget.bad_config.index(5)
    assert out["chain"] == [0, k] and out["vertex"] == 3
    assert out["total_change"] == pytest.approx(-9.0)
    assert world.positions[0] == 3 and world.positions[k] == 0
    assert world.cost == pytest.approx(1.0)


def test_unknown_wave_is_recorded_as_protocol_error():
    world = World(PATH, [0, 2], 0.1)
    graph, q, part, nbrs = world.local_args()
    stray = Message("acceptance", 1, 0, wave_id=999, origin=1, vertex=0, total_change=-5.0, accepter=1)
    proposal = Message("proposal", 0, -1, world.next_wave_id(), 0, ((0, 0.0), (1, -1.0)), 1)
    out = resolve_wave(world, proposal, extra_messages=[stray])
    assert out["outcome"] == "wave-rejected"
    errors = world.trace.errors()
    assert len(errors) == 1 and errors[0]["reason"] == "unknown wave" and errors[0]["wave_id"] == 999


def test_unexpected_response_is_recorded():
    world = World(PATH, [0, 2], 0.1)
    wave = world.next_wave_id()
    stray = Message("rejection", 1, 0, wave_id=wave)
    proposal = Message("proposal", 0, -1, wave, 0, ((0, 0.0), (1, -1.0)), 1)
    resolve_wave(world, proposal, extra_messages=[stray])
    assert [e["reason"] for e in world.trace.errors()] == ["unexpected response"]


def test_world_rejects_start_on_dummy_vertex():
    work, movable = protocol_graph(PATH)
    with pytest.raises(ValueError):
        World(work, [3], 0.1, movable=movable)


def test_protocol_graph_marks_original_vertices():
    work, movable = protocol_graph(PATH)
    assert work.vertex_count == 5 and movable.tolist() == [True, True, True, False, False]
    raw, mask = protocol_graph(MetricGraph([1, 1], [[0, 1], [1, 0]]))
    assert raw.vertex_count == 2 and mask.all()


# --- full runs ----------------------------------------------------------

def test_run_with_every_vertex_covered_stops_at_zero():
    res, trace = run_distributed(PATH, [0, 1, 2])
    assert res.cost == 0.0 and res.iterations == 0 and trace.moves() == []


def test_run_path_single_robot():
    res, _ = run_distributed(PATH, [0])
    assert res.config == (1,) and res.cost == 2.0


def test_run_gadget_reaches_good_cost():
    gadget = gen_gadget_instance(4, L=10.0)
    res, trace = run_distributed(gadget.graph, gadget.bad_config)
    assert res.cost == pytest.approx(1.0)
    assert trace.move_counts()["type2-single-hop"] >= 1


@pytest.mark.parametrize("seed", range(0, 200, 4))
def test_run_random_oracle_instances(seed):
    g, m, init = random_oracle_instance(seed)
    eps0 = default_epsilon0(g, m)
    res, trace = run_distributed(g, init, eps0, seed=seed)
    opt = brute_force_optimum(g, m).cost
    assert res.cost <= 5 * opt + eps0 * g.vertex_count * m
    assert verify_no_improving_swap(g, res.config, eps0) == (True, None)
    curve = [trace.initial_cost] + trace.cost_curve
    assert all(b - a <= -eps0 for a, b in zip(curve, curve[1:]))
    assert res.iterations <= (coverage_cost(g, init) - opt) / eps0
    for counts in trace.message_counts.values():
        assert counts["proposal"] <= m * m and counts["response"] <= m * m
    assert trace.errors() == []


@pytest.mark.parametrize("seed", range(30))
def test_larger_runs_with_multi_hop_chains_stay_exact(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(10, 16)), int(rng.integers(4, 9))
    pts = rng.random((n, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    edges = [(u, v, float(d[u, v])) for u in range(n) for v in range(u + 1, n) if d[u, v] < 0.45 or v == u + 1]
    g = metric_closure(n, edges, 1.0 - rng.random(n))
    init = [int(v) for v in rng.integers(0, n, m)]
    eps0 = default_epsilon0(g, m)
    res, trace = run_distributed(g, init, eps0, seed=seed)
    assert verify_no_improving_swap(g, res.config, eps0)[0]
    prev = list(init)
    for move in trace.moves():
        real = coverage_cost(g, move["config"]) - coverage_cost(g, prev)
        assert real <= -eps0
        assert real == pytest.approx(move["claimed_change"], rel=1e-9)
        if move["type"] != "type1-move":
            assert move["config"][move["origin"]] == move["vertex"]
            chain = move["chain"]
            for parent, child in zip(chain, chain[1:]):
                assert move["config"][child] == prev[parent]
        prev = move["config"]
    for counts in trace.message_counts.values():
        assert counts["proposal"] <= m * m and counts["response"] <= m * m


def test_multi_hop_moves_occur_somewhere():
    kinds = set()
    for seed in range(30):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(10, 16)), int(rng.integers(4, 9))
        pts = rng.random((n, 2))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        edges = [(u, v, float(d[u, v])) for u in range(n) for v in range(u + 1, n) if d[u, v] < 0.45 or v == u + 1]
        g = metric_closure(n, edges, 1.0 - rng.random(n))
        init = [int(v) for v in rng.integers(0, n, m)]
        kinds |= {mv["type"] for mv in run_distributed(g, init)[1].moves()}
    assert kinds == set(MOVE_TYPES)


def test_runs_are_deterministic():
    g, m, init = random_oracle_instance(5)
    a = run_distributed(g, init, seed=3)[1].to_jsonl()
    b = run_distributed(g, init, seed=3)[1].to_jsonl()
    assert a == b


def test_trace_serialization_and_summary():
    gadget = gen_gadget_instance(4, L=10.0)
    _, trace = run_distributed(gadget.graph, gadget.bad_config)
    lines = trace.to_jsonl().splitlines()
    events = [json.loads(line) for line in lines]
    assert [e["step"] for e in events] == list(range(len(events)))
    kinds = {e["type"] for e in events}
    assert {"message-sent", "completion", "type2-single-hop"} <= kinds
    summary = trace.summary()
    assert sum(summary["shares"].values()) == pytest.approx(1.0)
    assert summary["waves"] == len(trace.message_counts)


def test_trace_without_message_recording_keeps_counts():
    gadget = gen_gadget_instance(4, L=10.0)
    _, quiet = run_distributed(gadget.graph, gadget.bad_config, record_messages=False)
    _, loud = run_distributed(gadget.graph, gadget.bad_config)
    assert quiet.message_counts == loud.message_counts
    assert not any(e["type"] == "message-sent" for _, e in quiet.events)
    assert isinstance(quiet, ProtocolTrace)


def test_ablation_without_self_term_still_terminates():
    g, m, init = random_oracle_instance(8)
    res, trace = run_distributed(g, init, include_self_in_rho=False)
    assert res.cost <= coverage_cost(g, init)


def test_verify_examples():
    assert verify_no_improving_swap(PATH, [1], 0.1) == (True, None)
    ok, witness = verify_no_improving_swap(PATH, [0], 0.1)
    assert not ok and witness == (0, 1, -1.0)
    opt = brute_force_optimum(PATH, 2)
    assert verify_no_improving_swap(PATH, opt.config, 1e-9)[0]


def test_run_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        run_distributed(PATH, [0], eps0=0.0)
