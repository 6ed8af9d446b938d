"""Scenario files, random scenario generation, batch runs and report rendering."""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .environment import (DEFAULT_FINE_FACTOR, Density, DiscretizationError, Environment, FineGrid, build_coverage_graph,
                          grid_sample)
from .graph import GraphError, MetricGraph, SensingFunction, gen_gadget_instance
from .partition import DEFAULT_RADIUS_FACTOR, coverage_cost
from .protocol import run_distributed
from .solvers import centralized_local_search, default_epsilon0, descent_baseline

CENTRALIZED = "centralized"
SOLVERS = (
    CENTRALIZED,
    "centralized-p2",
    "distributed",
    "distributed-factor2",
    "descent-own-partition",
    "descent-neighbor-aware",
)
DEFAULT_SOLVERS = (CENTRALIZED, "distributed", "distributed-factor2", "descent-own-partition", "descent-neighbor-aware")
CSV_COLUMNS = ("scenario_id", "solver", "cost", "pct_vs_centralized", "moves_type1", "moves_type2_single",
               "moves_type2_multi", "messages")
INSTANCE_KINDS = ("environment", "graph", "gadget")


class ScenarioError(ValueError):
    """A scenario document that does not match the schema; the message names the field."""


@dataclass(frozen=True)
class Scenario:
    id: str
    instance: dict
    m: int
    init: object = "corner"
    solvers: tuple[str, ...] = DEFAULT_SOLVERS
    epsilon0: object = "auto"
    radius_factor: float = DEFAULT_RADIUS_FACTOR
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instance": copy.deepcopy(self.instance),
            "m": self.m,
            "init": copy.deepcopy(self.init),
            "solvers": list(self.solvers),
            "epsilon0": self.epsilon0,
            "radius_factor": self.radius_factor,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _require(doc: dict, key: str, where: str = ""):
    if key not in doc:
        raise ScenarioError(f"missing required field {where}{key!r}")
    return doc[key]


def parse_scenario(document) -> Scenario:
    """Validate a scenario (dict or JSON text) and fill defaults."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ScenarioError("scenario must be a JSON object")
    m = _require(document, "m")
    if isinstance(m, bool) or not isinstance(m, int) or m < 1:
        raise ScenarioError("field 'm' must be a positive integer")
    instance = _require(document, "instance")
    if not isinstance(instance, dict):
        raise ScenarioError("field 'instance' must be an object")
    kind = _require(instance, "kind", "instance.")
    if kind not in INSTANCE_KINDS:
        raise ScenarioError(f"field 'instance.kind' must be one of {INSTANCE_KINDS}")
    if kind == "environment":
        env_doc = _require(instance, "environment", "instance.")
        try:
            Environment.from_dict(env_doc)
        except ValueError as exc:
            raise ScenarioError(f"field 'instance.environment': {exc}") from exc
        h = _require(instance, "cell_size", "instance.")
        if not isinstance(h, (int, float)) or h <= 0:
            raise ScenarioError("field 'instance.cell_size' must be positive")
        try:
            SensingFunction(instance.get("sensing", "identity"))
        except ValueError as exc:
            raise ScenarioError(f"field 'instance.sensing': {exc}") from exc
    elif kind == "graph":
        try:
            MetricGraph.from_dict(_require(instance, "graph", "instance."))
        except (GraphError, KeyError, TypeError) as exc:
            raise ScenarioError(f"field 'instance.graph': {exc}") from exc
    else:
        n = _require(instance, "n", "instance.")
        if not isinstance(n, int) or n < 2:
            raise ScenarioError("field 'instance.n' must be an integer >= 2")
        if instance.get("init", "bad") not in ("bad", "good"):
            raise ScenarioError("field 'instance.init' must be 'bad' or 'good'")

    init = document.get("init", "gadget" if kind == "gadget" else "corner")
    if init == "corner":
        if kind != "environment":
            raise ScenarioError("field 'init': corner initialization needs an environment instance")
    elif init == "gadget":
        if kind != "gadget":
            raise ScenarioError("field 'init': 'gadget' is only valid for gadget instances")
    elif isinstance(init, dict):
        if set(init) != {"random"} or not isinstance(init["random"], int):
            raise ScenarioError("field 'init' must be 'corner', {'random': seed} or a list of vertex ids")
    elif isinstance(init, list):
        if len(init) != m or not all(isinstance(v, int) and not isinstance(v, bool) for v in init):
            raise ScenarioError(f"field 'init' must list exactly m={m} integer vertex ids")
    else:
        raise ScenarioError("field 'init' must be 'corner', {'random': seed} or a list of vertex ids")

    solvers = list(document.get("solvers", DEFAULT_SOLVERS))
    unknown = [s for s in solvers if s not in SOLVERS]
    if unknown:
        raise ScenarioError(f"field 'solvers' has unknown entries {unknown}")
    if CENTRALIZED not in solvers:
        solvers.insert(0, CENTRALIZED)
    solvers = tuple(s for s in SOLVERS if s in solvers)

    eps = document.get("epsilon0", "auto")
    if eps != "auto" and (isinstance(eps, bool) or not isinstance(eps, (int, float)) or eps <= 0):
        raise ScenarioError("field 'epsilon0' must be 'auto' or a positive number")
    factor = document.get("radius_factor", DEFAULT_RADIUS_FACTOR)
    if isinstance(factor, bool) or not isinstance(factor, (int, float)) or factor <= 0:
        raise ScenarioError("field 'radius_factor' must be a positive number")
    seed = document.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("field 'seed' must be an integer")
    sid = str(document.get("id", f"scenario-{seed}"))
    return Scenario(sid, copy.deepcopy(instance), m, copy.deepcopy(init), solvers,
                    eps if eps == "auto" else float(eps), float(factor), seed)


# ---------------------------------------------------------------------------
# resolution


@dataclass(eq=False)
class ResolvedScenario:
    scenario: Scenario
    graph: MetricGraph
    init: list[int]
    epsilon0: float
    discretization: object = None


def resolve_scenario(scenario: Scenario) -> ResolvedScenario:
    inst = scenario.instance
    disc = None
    if inst["kind"] == "environment":
        env = Environment.from_dict(inst["environment"])
        disc = grid_sample(env, inst["cell_size"], inst.get("fine_factor", DEFAULT_FINE_FACTOR))
        graph = build_coverage_graph(disc, SensingFunction(inst.get("sensing", "identity")))
    elif inst["kind"] == "graph":
        graph = MetricGraph.from_dict(inst["graph"])
    else:
        gadget = gen_gadget_instance(inst["n"], inst.get("eps", 0.1), inst.get("L", 10.0))
        graph = gadget.graph
    n = graph.vertex_count
    init = scenario.init
    if init == "corner":
        q = disc.corner_config(scenario.m)
    elif init == "gadget":
        q = list(gadget.bad_config if inst.get("init", "bad") == "bad" else gadget.good_config)
        if len(q) != scenario.m:
            raise ScenarioError(f"field 'm': gadget with n={inst['n']} needs m={len(q)}")
    elif isinstance(init, dict):
        rng = np.random.default_rng(init["random"])
        q = [int(v) for v in rng.choice(n, size=scenario.m, replace=scenario.m > n)]
    else:
        q = [int(v) for v in init]
        if any(v < 0 or v >= n for v in q):
            raise ScenarioError(f"field 'init' has vertex ids outside [0, {n})")
    eps0 = default_epsilon0(graph, scenario.m) if scenario.epsilon0 == "auto" else float(scenario.epsilon0)
    return ResolvedScenario(scenario, graph, q, eps0, disc)


# ---------------------------------------------------------------------------
# random scenarios

NONCONVEX_TEMPLATE = {
    "bounds": [1500.0, 850.0],
    "cell_size": 50.0,
    "obstacles": 2,
    "obstacle_extent": [[100.0, 450.0], [100.0, 450.0]],
    "sigma": [5e4, 1e5],
    "mean": "random",
    "components": 1,
    "m": 10,
    "solvers": list(DEFAULT_SOLVERS),
    "max_attempts": 50,
}
CONVEX_TEMPLATE = dict(NONCONVEX_TEMPLATE, obstacles=0, mean=[1400.0, 800.0])
TEMPLATES = {"nonconvex": NONCONVEX_TEMPLATE, "convex": CONVEX_TEMPLATE}


def _random_free_point(env: Environment, rng: np.random.Generator) -> list[float]:
    for _ in range(10_000):
        p = rng.uniform([0, 0], [env.width, env.height])
        if env.is_free(p)[0]:
            return [float(p[0]), float(p[1])]
    raise DiscretizationError("could not find a free point for the density mean")


def _layout_problem(env: Environment, cell_size: float, m: int) -> str | None:
    """Cheap pre-check mirroring grid_sample's connectivity and sample-count requirements."""
    nx, ny = max(1, round(env.width / cell_size)), max(1, round(env.height / cell_size))
    try:
        fine = FineGrid(env, nx * DEFAULT_FINE_FACTOR, ny * DEFAULT_FINE_FACTOR)
    except DiscretizationError as exc:
        return str(exc)
    pieces = fine.components()
    if pieces > 1:
        return f"free space splits into {pieces} pieces at cell size {cell_size}"
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    centers = np.column_stack([(ii.ravel() + 0.5) * env.width / nx, (jj.ravel() + 0.5) * env.height / ny])
    free = int(env.is_free(centers).sum())
    if free < m:
        return f"only {free} free samples for {m} robots"
    return None


def generate_random_scenario(template: dict | str, seed: int) -> Scenario:
    """Draw obstacles, gaussian spreads and means from ``template`` ranges.

    Layouts whose free space is disconnected at the template's cell size are
    redrawn; the rejected attempts are listed under ``instance.generation``.
    """
    if isinstance(template, str):
        if template not in TEMPLATES:
            raise ScenarioError(f"unknown template {template!r}; choose from {sorted(TEMPLATES)}")
        template = TEMPLATES[template]
    t = dict(NONCONVEX_TEMPLATE, **template)
    rng = np.random.default_rng(seed)
    w, h = (float(x) for x in t["bounds"])
    (wlo, whi), (hlo, hhi) = t["obstacle_extent"]
    rejected = []
    for attempt in range(int(t["max_attempts"])):
        obstacles = []
        for _ in range(int(t["obstacles"])):
            ow, oh = rng.uniform(wlo, whi), rng.uniform(hlo, hhi)
            x0, y0 = rng.uniform(0, w - ow), rng.uniform(0, h - oh)
            obstacles.append(((x0, y0), (x0 + ow, y0), (x0 + ow, y0 + oh), (x0, y0 + oh)))
        probe = Environment(w, h, tuple(obstacles))
        components = []
        for _ in range(int(t["components"])):
            sigma = float(rng.uniform(*t["sigma"]))
            mean = _random_free_point(probe, rng) if t["mean"] == "random" else [float(x) for x in t["mean"]]
            components.append((1.0, mean, [[sigma, 0.0], [0.0, sigma]]))
        density = (Density.gaussian(components[0][1], components[0][2]) if len(components) == 1
                   else Density.mixture(components))
        env = Environment(w, h, tuple(obstacles), density)
        reason = _layout_problem(env, float(t["cell_size"]), int(t["m"]))
        if reason:
            rejected.append({"attempt": attempt, "reason": reason})
            continue
        instance = {"kind": "environment", "environment": env.to_dict(), "cell_size": float(t["cell_size"]),
                    "generation": {"template_seed": seed, "attempts": attempt + 1, "rejected": rejected}}
        return Scenario(f"seed-{seed}", instance, int(t["m"]), "corner", tuple(t["solvers"]), "auto",
                        DEFAULT_RADIUS_FACTOR, seed)
    raise DiscretizationError(f"no connected layout after {t['max_attempts']} attempts: {rejected[-1]['reason']}")


# ---------------------------------------------------------------------------
# running


def _robot_paths(initial: Sequence[int], history: Iterable[tuple[Sequence[int], float]]) -> list[list[int]]:
    paths = [[int(v)] for v in initial]
    for config, _ in history:
        for r, v in enumerate(config):
            if paths[r][-1] != v:
                paths[r].append(int(v))
    return paths


def _run_solver(name: str, rs: ResolvedScenario) -> dict:
    g, q0, eps0, m = rs.graph, rs.init, rs.epsilon0, rs.scenario.m
    row = {"solver": name, "moves_type1": None, "moves_type2_single": None, "moves_type2_multi": None,
           "messages": None}
    if name.startswith("distributed"):
        factor = 2.0 if name == "distributed-factor2" else rs.scenario.radius_factor
        result, trace = run_distributed(g, q0, eps0, factor, rs.scenario.seed)
        counts, summary = trace.move_counts(), trace.summary()
        row.update(moves_type1=counts["type1-move"], moves_type2_single=counts["type2-single-hop"],
                   moves_type2_multi=counts["type2-multi-hop"],
                   messages=summary["proposals"] + summary["responses"] + summary["acknowledgments"],
                   move_shares=summary["shares"], radius_factor=factor)
        curve = [float(coverage_cost(g, q0))] + [float(c) for c in trace.cost_curve]
    elif name.startswith("centralized"):
        result = centralized_local_search(g, m, 2 if name == "centralized-p2" else 1, eps0, q0)
        curve = [result.initial_cost] + [c for _, c in result.history]
    else:
        mode = name[len("descent-"):]
        result = descent_baseline(g, m, eps0, q0, mode)
        curve = [result.initial_cost] + [c for _, c in result.history]
    row.update(cost=float(result.cost), iterations=result.iterations, config=list(result.config),
               cost_curve=curve, paths=_robot_paths(q0, result.history))
    return row


def pct_difference(cost: float, reference: float) -> float | None:
    """100 * (cost - reference) / reference; 0 when both are 0, None when only the reference is 0."""
    if reference == 0:
        return 0.0 if cost == 0 else None
    return 100.0 * (cost - reference) / reference


def run_scenario(scenario: Scenario, include_timing: bool = False) -> dict:
    import time

    out = {"id": scenario.id, "scenario": scenario.to_dict(), "rows": []}
    try:
        rs = resolve_scenario(scenario)
    except (ValueError, RuntimeError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
        return out
    out.update(vertex_count=rs.graph.vertex_count, epsilon0=rs.epsilon0, init=list(rs.init),
               initial_cost=coverage_cost(rs.graph, rs.init))
    if rs.discretization is not None:
        out["geometry"] = {"environment": scenario.instance["environment"],
                           "sample_coords": rs.discretization.samples.tolist(),
                           "dispersion": rs.discretization.dispersion}
    for name in scenario.solvers:
        start = time.perf_counter()
        try:
            row = _run_solver(name, rs)
        except Exception as exc:  # recorded per row; the batch keeps going
            row = {"solver": name, "error": f"{type(exc).__name__}: {exc}", "cost": None}
        if include_timing:
            row["wall_clock_s"] = time.perf_counter() - start
        out["rows"].append(row)
    ref = next((r["cost"] for r in out["rows"] if r["solver"] == CENTRALIZED), None)
    for row in out["rows"]:
        ok = row.get("cost") is not None and ref is not None
        row["pct_vs_centralized"] = pct_difference(row["cost"], ref) if ok else None
    return out


def _run_one(args):
    return run_scenario(*args)


def run_experiment(scenarios: Sequence[Scenario], workers: int = 1, include_timing: bool = False) -> dict:
    """Run every scenario and aggregate; rows come back ordered by scenario id."""
    ordered = sorted(scenarios, key=lambda s: s.id)
    if len({s.id for s in ordered}) != len(ordered):
        raise ScenarioError("scenario ids must be unique within a batch")
    jobs = [(s, include_timing) for s in ordered]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return {"scenarios": results, "summary": summarize(results)}


def summarize(results: Sequence[dict]) -> dict:
    by_solver: dict[str, dict[str, list]] = {}
    for scn in results:
        for row in scn.get("rows", []):
            acc = by_solver.setdefault(row["solver"], {"cost": [], "pct": [], "errors": 0})
            if row.get("cost") is None:
                acc["errors"] += 1
                continue
            acc["cost"].append(row["cost"])
            if row.get("pct_vs_centralized") is not None:
                acc["pct"].append(row["pct_vs_centralized"])
    summary = {}
    for name in sorted(by_solver, key=SOLVERS.index):
        acc = by_solver[name]
        summary[name] = {
            "runs": len(acc["cost"]),
            "errors": acc["errors"],
            "mean_cost": float(np.mean(acc["cost"])) if acc["cost"] else None,
            "mean_pct_vs_centralized": float(np.mean(acc["pct"])) if acc["pct"] else None,
            "max_pct_vs_centralized": float(np.max(acc["pct"])) if acc["pct"] else None,
        }
    return summary


# ---------------------------------------------------------------------------
# rendering


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for scn in report["scenarios"]:
        for row in scn.get("rows", []):
            writer.writerow([scn["id"]] + [_cell(row.get(col)) for col in CSV_COLUMNS[1:]])
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def render_svg(environment: dict, sample_coords: Sequence[Sequence[float]], paths: Sequence[Sequence[int]],
               width_px: int = 600) -> str:
    """Obstacles, sample grid, robot movement polylines and final robot markers."""
    w, h = environment["bounds"]
    scale = width_px / w
    height_px = max(1.0, h * scale)

    def xy(p):
        return _fmt(p[0] * scale), _fmt(height_px - p[1] * scale)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" height="{_fmt(height_px)}" '
           f'viewBox="0 0 {width_px} {_fmt(height_px)}">',
           f'<rect x="0" y="0" width="{width_px}" height="{_fmt(height_px)}" fill="white" stroke="black"/>']
    for ring in environment.get("obstacles", []):
        pts = " ".join(",".join(xy(p)) for p in ring)
        out.append(f'<polygon class="obstacle" points="{pts}" fill="#777"/>')
    radius = _fmt(max(1.0, 0.08 * width_px / max(1, math.sqrt(len(sample_coords)))))
    for p in sample_coords:
        x, y = xy(p)
        out.append(f'<circle class="sample" cx="{x}" cy="{y}" r="{radius}" fill="#bbb"/>')
    for path in paths:
        if len(path) > 1:
            pts = " ".join(",".join(xy(sample_coords[v])) for v in path)
            out.append(f'<polyline class="path" points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>')
    for path in paths:
        x, y = xy(sample_coords[path[-1]])
        out.append(f'<circle class="robot" cx="{x}" cy="{y}" r="4" fill="#d62728"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def render_report(report: dict, out_dir: str | os.PathLike, formats: Iterable[str] = ("csv", "json")) -> list[Path]:
    """Write report.csv / report.json and, for environment scenarios, one SVG per solver."""
    if not report.get("scenarios"):
        raise ValueError("report has no scenarios")
    formats = set(formats)
    unknown = formats - {"csv", "json", "svg"}
    if unknown:
        raise ValueError(f"unknown formats {sorted(unknown)}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []

    def write(name: str, text: str):
        path = out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)

    if "csv" in formats:
        write("report.csv", report_csv(report))
    if "json" in formats:
        write("report.json", report_json(report))
    if "svg" in formats:
        for scn in report["scenarios"]:
            geo = scn.get("geometry")
            if geo is None:
                continue
            for row in scn["rows"]:
                if row.get("paths"):
                    write(f"{_safe(scn['id'])}__{_safe(row['solver'])}.svg",
                          render_svg(geo["environment"], geo["sample_coords"], row["paths"]))
    return written
