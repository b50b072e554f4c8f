"""Command-line entry point: run, compare-ttc, bench, validate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .params import ParamError, load_params
from .scenario import ScenarioError, load_scenario, resolve_scenario

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID = 2
EXIT_COLLISION = 3


def _grid(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be >= 1")
    return w, h


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskplan", description="Risk-field local planner and closed-loop simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write the run report")
    run.add_argument("scenario", help="scenario file or shipped fixture name")
    run.add_argument("--params", help="parameter file (merged over the defaults)")
    run.add_argument("--out", default="out", help="output directory (default: ./out)")
    run.add_argument("--dump-grids", action="store_true", help="write every risk grid (binary) plus CSVs of the first stack")
    run.add_argument("--workers", type=_positive, default=1)
    run.add_argument("--no-figures", action="store_true", help="skip the PNG figures")

    cmp_ = sub.add_parser("compare-ttc", help="risk planner vs TTC braking on the same scenario")
    cmp_.add_argument("scenario")
    cmp_.add_argument("--params")
    cmp_.add_argument("--out", help="write both runs' artifacts under this directory")

    b = sub.add_parser("bench", help="time stack building and planning")
    b.add_argument("--grid", type=_grid, action="append", help="grid size in cells, WxH (repeatable; default 240x80)")
    b.add_argument("--objects", type=_positive, action="append", help="object count (repeatable; default 10)")
    b.add_argument("--workers", type=_positive, action="append", help="worker count (repeatable; default 1)")
    b.add_argument("--iterations", type=_positive, default=50)

    v = sub.add_parser("validate", help="parse and check a scenario file")
    v.add_argument("scenario")
    v.add_argument("--params")
    return ap


def _load(ref: str, params_path: str | None):
    params = load_params(params_path)
    sc = load_scenario(resolve_scenario(ref), stiffness=params.risk.stiffness)
    return sc, params


def cmd_run(args) -> int:
    from .plotting import write_report_figures
    from .sim import SimConfig, Simulator

    sc, params = _load(args.scenario, args.params)
    out = Path(args.out)
    cfg = SimConfig(params_path=args.params, workers=args.workers, out_dir=str(out), dump_grids=args.dump_grids)
    sim = Simulator(sc, cfg, params)
    metrics = sim.run()
    if not args.no_figures:
        write_report_figures(sim, out / "figures")
    summary = metrics.summary()
    print(json.dumps(summary, indent=1, sort_keys=True))
    print(f"artifacts written to {out}")
    return EXIT_COLLISION if metrics.collision else EXIT_OK


def cmd_compare(args) -> int:
    from .sim import SimConfig, compare_ttc

    sc, params = _load(args.scenario, args.params)
    report = compare_ttc(sc, SimConfig(params_path=args.params, out_dir=args.out), params)
    text = json.dumps(report, indent=1, sort_keys=True, allow_nan=False)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "comparison.json").write_text(text + "\n")
    print(text)
    collided = report["risk"]["collision"] or report["ttc"]["collision"]
    return EXIT_COLLISION if collided else EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench, budget_warnings, format_table

    rows = bench(grids=args.grid or [(240, 80)], objects=args.objects or [10], workers=args.workers or [1],
                 iterations=args.iterations)
    print(format_table(rows))
    for w in budget_warnings(rows):
        print(f"warning: {w}")
    if not all(r.equal for r in rows):
        print("error: multi-worker stack differs from the single-worker build", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def cmd_validate(args) -> int:
    sc, _ = _load(args.scenario, args.params)
    print(f"ok: {sc.name}: {len(sc.lanes.lanes)} lanes, {len(sc.statics)} static objects, "
          f"{len(sc.agents)} agents, {sc.duration:g} s")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare-ttc": cmd_compare, "bench": cmd_bench, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ParamError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
