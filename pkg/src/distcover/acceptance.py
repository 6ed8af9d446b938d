"""Acceptance suites: oracle-checked runs that gate a release.

Each ``criterion_*`` function returns a :class:`CriterionResult`; the
``verify`` CLI subcommand and ``tests/test_acceptance.py`` both call them.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree

from .environment import build_coverage_graph, grid_sample, segment_environment
from .experiments import NONCONVEX_TEMPLATE, generate_random_scenario, report_json, run_experiment
from .graph import IDENTITY, MetricGraph, gen_gadget_instance, metric_closure
from .partition import assign_partitions, coverage_cost, neighbor_sets, service_costs
from .protocol import ProtocolTrace, run_distributed, verify_no_improving_swap
from .solvers import brute_force_optimum, centralized_local_search, default_epsilon0, descent_baseline

SUITE1_SIZE = 200
LOCALITY_TUPLES = 500
DESK_SCENARIOS = 20
REL_TOL = 1e-9


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] criterion {self.number}: {self.title} | {self.detail} | {self.seconds:.1f}s"


# ---------------------------------------------------------------------------
# suite 1: small random metric instances with a brute-force optimum


def random_oracle_instance(seed: int) -> tuple[MetricGraph, int, list[int]]:
    """|V| in [5, 12], m in [1, 3], weights in (0, 1], Euclidean points in the unit square.

    Even seeds use the complete edge list, odd seeds a sparse 3-nearest-neighbor
    graph joined by its minimum spanning tree.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 13))
    m = int(rng.integers(1, 4))
    pts = rng.random((n, 2))
    weights = 1.0 - rng.random(n)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    if seed % 2 == 0:
        pairs = {(u, v) for u in range(n) for v in range(u + 1, n)}
    else:
        pairs = set()
        for u in range(n):
            for v in np.argsort(d[u], kind="stable")[1:4]:
                pairs.add((min(u, int(v)), max(u, int(v))))
        tree = minimum_spanning_tree(d).tocoo()
        pairs.update((min(int(u), int(v)), max(int(u), int(v))) for u, v in zip(tree.row, tree.col))
    graph = metric_closure(n, [(u, v, float(d[u, v])) for u, v in sorted(pairs)], weights)
    init = [int(x) for x in rng.integers(0, n, m)]
    return graph, m, init


@dataclass
class Suite1Run:
    seed: int
    graph: MetricGraph
    m: int
    init: list[int]
    eps0: float
    opt: float
    result: object
    trace: ProtocolTrace
    result_factor2: object
    trace_factor2: ProtocolTrace


def _suite1_run(seed: int) -> Suite1Run:
    g, m, init = random_oracle_instance(seed)
    eps0 = default_epsilon0(g, m)
    opt = brute_force_optimum(g, m).cost
    res, tr = run_distributed(g, init, eps0, radius_factor=4, seed=seed)
    res2, tr2 = run_distributed(g, init, eps0, radius_factor=2, seed=seed)
    return Suite1Run(seed, g, m, init, eps0, opt, res, tr, res2, tr2)


@lru_cache(maxsize=2)
def suite1(size: int = SUITE1_SIZE) -> tuple[tuple[Suite1Run, ...], float]:
    start = time.perf_counter()
    runs = tuple(_suite1_run(s) for s in range(size))
    return runs, time.perf_counter() - start


def suite1_fingerprint(runs) -> str:
    """JSON of every result and trace in the suite, for byte-level determinism checks."""
    blob = []
    for r in runs:
        blob.append(json.dumps({"seed": r.seed, "eps0": r.eps0, "opt": r.opt, "result": r.result.to_dict(),
                                "result_factor2": r.result_factor2.to_dict()}, sort_keys=True))
        blob.append(r.trace.to_jsonl())
        blob.append(r.trace_factor2.to_jsonl())
    return "\n".join(blob)


def criterion_1(size: int = SUITE1_SIZE) -> CriterionResult:
    runs, secs = suite1(size)
    bad = [r.seed for r in runs if r.result.cost > 5 * r.opt + r.eps0 * r.graph.vertex_count * r.m]
    worst = max((r.result.cost / r.opt for r in runs if r.opt > 0), default=1.0)
    ok = not bad and secs < 120
    return CriterionResult(1, "distributed cost <= 5*OPT + eps0*|V|*m", ok,
                           f"{len(runs) - len(bad)}/{len(runs)} within bound, worst ratio {worst:.4f}, "
                           f"suite runtime {secs:.1f}s (< 120s)", secs, {"violations": bad, "worst_ratio": worst})


def criterion_2(size: int = SUITE1_SIZE) -> CriterionResult:
    runs, _ = suite1(size)
    start = time.perf_counter()
    bad = [r.seed for r in runs if not verify_no_improving_swap(r.graph, r.result.config, r.eps0)[0]]
    bad2 = [r.seed for r in runs if not verify_no_improving_swap(r.graph, r.result_factor2.config, r.eps0)[0]]
    rate2 = len(bad2) / len(runs)
    return CriterionResult(2, "no improving single swap at termination (factor 4)", not bad,
                           f"factor 4: {len(bad)}/{len(runs)} violations; factor 2 (recorded only): "
                           f"{len(bad2)}/{len(runs)} = {100 * rate2:.1f}%", time.perf_counter() - start,
                           {"violations": bad, "factor2_violations": bad2, "factor2_rate": rate2})


def _move_checks(graph: MetricGraph, trace: ProtocolTrace, eps0: float):
    """Yield (independent delta, claimed delta) for every accepted move."""
    n = graph.vertex_count
    prev = list(trace.initial_config)
    for move in trace.moves():
        config = move["config"]
        if max(config) >= n:
            raise AssertionError(f"robot left the original vertex set: {config}")
        before, after = coverage_cost(graph, prev), coverage_cost(graph, config)
        yield after - before, move["claimed_change"]
        prev = config


def criterion_3(size: int = SUITE1_SIZE) -> CriterionResult:
    runs, _ = suite1(size)
    start = time.perf_counter()
    moves = not_improving = mismatched = 0
    for r in runs:
        for real, claimed in _move_checks(r.graph, r.trace, r.eps0):
            moves += 1
            not_improving += real > -r.eps0
            mismatched += abs(real - claimed) > REL_TOL * max(abs(real), abs(claimed))
    ok = moves > 0 and not not_improving and not mismatched
    return CriterionResult(3, "each accepted move improves D by >= eps0 and matches its claimed change", ok,
                           f"{moves} moves, {not_improving} below eps0, {mismatched} mismatched beyond 1e-9 rel",
                           time.perf_counter() - start, {"moves": moves})


def locality_tuple(seed: int):
    """A random (instance, config, robot, target vertex in its own partition) tuple.

    Instances are Euclidean point sets in a 4 x 1 strip with 12-40 vertices and
    3-10 robots, so plenty of robot pairs fall outside the neighbor range.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(12, 41))
    m = int(rng.integers(3, 11))
    pts = rng.random((n, 2)) * [4.0, 1.0]
    cost = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    g = MetricGraph(1.0 - rng.random(n), cost)
    config = [int(v) for v in rng.integers(0, n, m)]
    part = assign_partitions(g, config)
    owners = sorted({int(o) for o in part.owner})
    i = int(rng.choice(owners))
    v = int(rng.choice(part.members(i)))
    return g, config, i, v


def locality_violations(graph, config, i, v, radius_factor=4.0) -> list[int]:
    """Vertices owned by robots outside N(i) and i whose service cost changes when robot i moves to v."""
    part = assign_partitions(graph, config)
    nb = neighbor_sets(graph, config, part, radius_factor)[i]
    moved = list(config)
    moved[i] = v
    before, after = service_costs(graph, config), service_costs(graph, moved)
    far = [u for u in range(graph.vertex_count) if int(part.owner[u]) != i and int(part.owner[u]) not in nb]
    return [u for u in far if after[u] != before[u]]


def criterion_4(count: int = LOCALITY_TUPLES) -> CriterionResult:
    start = time.perf_counter()
    bad, far_checked = [], 0
    for s in range(count):
        g, config, i, v = locality_tuple(s)
        viol = locality_violations(g, config, i, v)
        part = assign_partitions(g, config)
        nb = neighbor_sets(g, config, part)[i]
        far_checked += sum(int(part.owner[u]) not in nb and int(part.owner[u]) != i for u in range(g.vertex_count))
        if viol:
            bad.append(s)
    return CriterionResult(4, "within-partition move leaves non-neighbor service costs unchanged", not bad,
                           f"{count} tuples, {far_checked} non-neighbor vertices checked, {len(bad)} violations",
                           time.perf_counter() - start, {"violations": bad})


def _wave_violations(trace: ProtocolTrace, m: int) -> tuple[int, int]:
    waves = bad = 0
    for counts in trace.message_counts.values():
        waves += 1
        bad += counts.get("proposal", 0) > m * m or counts.get("response", 0) > m * m
    return waves, bad


def criterion_5(size: int = SUITE1_SIZE) -> CriterionResult:
    runs, _ = suite1(size)
    start = time.perf_counter()
    waves = bad = 0
    traces = [(r.trace, r.m) for r in runs] + [(r.trace_factor2, r.m) for r in runs]
    gadget = gen_gadget_instance(4, L=10.0)
    traces.append((run_distributed(gadget.graph, gadget.bad_config)[1], len(gadget.bad_config)))
    for trace, m in traces:
        w, b = _wave_violations(trace, m)
        waves += w
        bad += b
    return CriterionResult(5, "every proposal wave sends <= m^2 proposals and <= m^2 responses", not bad,
                           f"{waves} waves over suite 1 (both factors) and the gadget, {bad} violations",
                           time.perf_counter() - start, {"waves": waves})


def criterion_6() -> CriterionResult:
    start = time.perf_counter()
    env = segment_environment(1.0)
    problems, notes = [], []
    final = None
    for h in (1 / 8, 1 / 16, 1 / 32):
        disc = grid_sample(env, h)
        g = build_coverage_graph(disc, IDENTITY)
        slack = IDENTITY(disc.dispersion)
        for s in range(disc.sample_count):
            big_h, d = disc.continuous_cost([s]), coverage_cost(g, [s])
            if big_h > d + slack + 1e-12:
                problems.append(f"h={h}: H={big_h} > D+f(zeta)={d + slack} at sample {s}")
        res, _ = run_distributed(g, disc.corner_config(1))
        big_h = disc.continuous_cost(res.config)
        if big_h > res.cost + slack + 1e-12:
            problems.append(f"h={h}: distributed H={big_h} > D+f(zeta)")
        notes.append(f"h=1/{round(1 / h)}: H(Q)={big_h:.5f}")
        final = big_h
    secs = time.perf_counter() - start
    if final > 0.26:
        problems.append(f"h=1/32 distributed continuous cost {final} > 0.26")
    if secs >= 30:
        problems.append(f"runtime {secs:.1f}s >= 30s")
    return CriterionResult(6, "unit segment anchor (H* = 0.25) and H <= D + f(zeta)", not problems,
                           "; ".join(notes + problems), secs, {"final_cost": final})


def criterion_7() -> CriterionResult:
    start = time.perf_counter()
    gadget = gen_gadget_instance(4, L=10.0)
    g, bad = gadget.graph, gadget.bad_config
    m = len(bad)
    costs = {
        "descent-own-partition": descent_baseline(g, m, init=bad, mode="own-partition").cost,
        "descent-neighbor-aware": descent_baseline(g, m, init=bad, mode="neighbor-aware").cost,
        "distributed": run_distributed(g, bad)[0].cost,
        "centralized": centralized_local_search(g, m, p=1, init=bad).cost,
    }
    expected = {"descent-own-partition": 10.0, "descent-neighbor-aware": 10.0, "distributed": 1.0,
                "centralized": 1.0}
    ok = all(abs(costs[k] - expected[k]) <= 1e-9 for k in expected)
    ratio = costs["descent-neighbor-aware"] / costs["distributed"] if costs["distributed"] else float("inf")
    detail = ", ".join(f"{k}={v:.9g}" for k, v in costs.items()) + f", ratio {ratio:.3g}"
    return CriterionResult(7, "city gadget separates descent (10) from distributed/centralized (1)", ok, detail,
                           time.perf_counter() - start, {"costs": costs})


DESK_SOLVERS = ["centralized", "distributed", "descent-neighbor-aware"]


def desk_scenarios(count: int = DESK_SCENARIOS):
    template = dict(NONCONVEX_TEMPLATE, solvers=DESK_SOLVERS)
    return [generate_random_scenario(template, s) for s in range(count)]


def criterion_8(count: int = DESK_SCENARIOS) -> CriterionResult:
    start = time.perf_counter()
    report = run_experiment(desk_scenarios(count))
    secs = time.perf_counter() - start
    rows = {}
    for scn in report["scenarios"]:
        rows[scn["id"]] = {r["solver"]: r for r in scn["rows"]}
    errors = [sid for sid, r in rows.items() if any(row.get("cost") is None for row in r.values())]
    dist = [r["distributed"]["cost"] for r in rows.values() if r["distributed"].get("cost") is not None]
    desc = [r["descent-neighbor-aware"]["cost"] for r in rows.values()
            if r["descent-neighbor-aware"].get("cost") is not None]
    within = sum(1 for r in rows.values()
                 if r["distributed"].get("pct_vs_centralized") is not None
                 and r["distributed"]["pct_vs_centralized"] <= 5.0)
    mean_dist, mean_desc = float(np.mean(dist)), float(np.mean(desc))
    ok = not errors and mean_dist <= mean_desc and within >= 0.9 * count and secs < 300
    detail = (f"mean distributed {mean_dist:.3f} vs neighbor-aware descent {mean_desc:.3f}; "
              f"{within}/{count} within 5% of centralized; runtime {secs:.1f}s (< 300s)")
    if errors:
        detail += f"; solver errors in {errors}"
    return CriterionResult(8, "desk-scale non-convex scenarios", ok, detail, secs,
                           {"report_sha256": hashlib.sha256(report_json(report).encode()).hexdigest()})


def criterion_9(size: int = SUITE1_SIZE, desk_count: int = 2) -> CriterionResult:
    start = time.perf_counter()
    runs, _ = suite1(size)
    first = suite1_fingerprint(runs)
    second = suite1_fingerprint(tuple(_suite1_run(s) for s in range(size)))
    scns = desk_scenarios(desk_count)
    rep_a = report_json(run_experiment(scns))
    rep_b = report_json(run_experiment(desk_scenarios(desk_count)))
    gadget = gen_gadget_instance(4, L=10.0)
    tr_a = run_distributed(gadget.graph, gadget.bad_config)[1].to_jsonl()
    tr_b = run_distributed(gadget.graph, gadget.bad_config)[1].to_jsonl()
    same = {"suite1": first == second, "desk_report": rep_a == rep_b, "gadget_trace": tr_a == tr_b}
    detail = ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items())
    return CriterionResult(9, "identical seeds give byte-identical reports and traces", all(same.values()), detail,
                           time.perf_counter() - start, same)


def criterion_10(size: int = SUITE1_SIZE) -> CriterionResult:
    runs, _ = suite1(size)
    bad = []
    for r in runs:
        d0 = coverage_cost(r.graph, r.init)
        if r.result.iterations > (d0 - r.opt) / r.eps0:
            bad.append(r.seed)
    most = max((r.result.iterations for r in runs), default=0)
    return CriterionResult(10, "accepted moves <= (D(Q0) - OPT) / eps0", not bad,
                           f"{len(runs) - len(bad)}/{len(runs)} within bound, at most {most} moves per run", 0.0,
                           {"violations": bad})


CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}


def run_acceptance(numbers=None) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if numbers is None else sorted(numbers)
    return [CRITERIA[k]() for k in numbers]
