"""Command line entry point: ``distcover gen | run | verify | render``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (TEMPLATES, ScenarioError, generate_random_scenario, parse_scenario, render_report,
                          report_json, run_experiment)


def _epsilon0(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a positive number or 'auto'") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("epsilon0 must be positive")
    return value


def _load_scenarios(paths: list[str]) -> list:
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not files:
        raise ScenarioError("no scenario files given")
    scenarios = []
    for f in files:
        doc = json.loads(f.read_text())
        docs = doc if isinstance(doc, list) else [doc]
        for d in docs:
            scenarios.append(parse_scenario(d))
    return scenarios


def cmd_gen(args) -> int:
    template = args.template
    if template not in TEMPLATES:
        template = json.loads(Path(template).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        scn = generate_random_scenario(template, args.seed + k)
        path = out / f"{scn.id}.json"
        path.write_text(scn.to_json() + "\n")
        print(path)
    return 0


def cmd_run(args) -> int:
    scenarios = _load_scenarios(args.scenarios)
    overrides = {}
    if args.factor is not None:
        overrides["radius_factor"] = float(args.factor)
    if args.epsilon0 is not None:
        overrides["epsilon0"] = args.epsilon0
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        scenarios = [parse_scenario({**s.to_dict(), **overrides}) for s in scenarios]
    report = run_experiment(scenarios, workers=args.workers, include_timing=args.timing)
    text = report_json(report)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        for name, row in report["summary"].items():
            pct = row["mean_pct_vs_centralized"]
            pct_text = "n/a" if pct is None else f"{pct:+.2f}%"
            print(f"{name:24s} mean cost {row['mean_cost']}  vs centralized {pct_text}")
    return 0


def cmd_verify(args) -> int:
    from .acceptance import CRITERIA

    numbers = args.criteria or sorted(CRITERIA)
    failed = 0
    for k in numbers:
        if k not in CRITERIA:
            print(f"unknown criterion {k}", file=sys.stderr)
            return 2
        result = CRITERIA[k]()
        print(result.line(), flush=True)
        failed += not result.passed
    return 1 if failed else 0


def cmd_render(args) -> int:
    report = json.loads(Path(args.report).read_text())
    for path in render_report(report, args.out, args.formats.split(",")):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distcover", description="Distributed multi-robot coverage experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate random scenario files from a template")
    gen.add_argument("--template", default="nonconvex",
                     help=f"built-in template ({', '.join(sorted(TEMPLATES))}) or a JSON file of overrides")
    gen.add_argument("--seed", type=int, default=0, help="seed of the first scenario")
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--out", default="scenarios")
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="run scenarios and write a JSON report")
    run.add_argument("scenarios", nargs="+", help="scenario JSON files or directories")
    run.add_argument("--out", default="report.json", help="report path, '-' for stdout")
    run.add_argument("--seed", type=int, default=None, help="override every scenario's seed")
    run.add_argument("--factor", type=float, choices=(2.0, 4.0), default=None, help="neighbor radius factor")
    run.add_argument("--epsilon0", type=_epsilon0, default=None, help="improvement threshold or 'auto'")
    run.add_argument("--workers", type=int, default=1, help="scenarios run in parallel processes")
    run.add_argument("--timing", action="store_true", help="add wall-clock seconds (makes output nondeterministic)")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="run the acceptance suites")
    verify.add_argument("criteria", nargs="*", type=int, help="criterion numbers (default: all)")
    verify.set_defaults(func=cmd_verify)

    render = sub.add_parser("render", help="write CSV / JSON / SVG files from a report")
    render.add_argument("report")
    render.add_argument("--out", default="out")
    render.add_argument("--formats", default="csv,json,svg")
    render.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:  # ScenarioError, DiscretizationError and JSONDecodeError included
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
