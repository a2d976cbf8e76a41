"""Command line entry point: ``run``, ``sweep``, ``build-table`` and ``verify``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import DEMAND_LEVELS, SCENARIOS, ConfigError, ScenarioConfig, load_config
from .powertrain import TableGrid, build_pareto_table
from .sim import SafetyViolation, compare_runs, emit_outputs, run_scenario
from .verify import run_all

log = logging.getLogger("caphev")

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_USAGE = 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="scenario JSON file (defaults when omitted)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caphev", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    _common(p)
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--demand", choices=DEMAND_LEVELS)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="scenario x demand matrix with a comparison table")
    _common(p)
    p.add_argument("--seed", type=int, nargs="+", default=[1], help="one or more seeds")
    p.add_argument("--demand", choices=DEMAND_LEVELS, nargs="+", default=list(DEMAND_LEVELS))
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("build-table", help="tabulate the Pareto split policy")
    p.add_argument("--config", type=Path, help="scenario JSON file supplying the powertrain")
    p.add_argument("--out", type=Path, default=Path("pareto_table.npz"), help="output .npz file")
    p.add_argument("--seed", type=int, help="accepted for interface symmetry; the table is deterministic")

    p = sub.add_parser("verify", help="run the oracle suites")
    p.add_argument("--seed", type=int, default=0, help="seed of the random instances")
    p.add_argument("--out", type=Path, help="write the results as JSON here")
    return parser


def _report(cfg: ScenarioConfig, result) -> list[str]:
    rep = result.report
    fails = rep.invariant_failures
    econ = rep.fleet.get("economy", {})
    print(f"{cfg.scenario:9s} {cfg.demand:7s} seed {cfg.seed}: "
          f"{len(rep.vehicles)} vehicles, economy {econ.get('mean', 0.0):.2f} km/kg, "
          f"stops {rep.stops['all']}, "
          f"{'OK' if not fails else 'INVARIANT FAILURE: ' + '; '.join(fails)}")
    return fails


def cmd_run(args) -> int:
    cfg = load_config(args.config, scenario=args.scenario, demand=args.demand, seed=args.seed)
    try:
        result = run_scenario(cfg)
    except SafetyViolation as exc:
        print(f"safety violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    paths = emit_outputs(result, args.out)
    fails = _report(cfg, result)
    print(f"outputs in {paths['summary'].parent}")
    return EXIT_INVARIANT if fails else EXIT_OK


def _sweep_one(cfg: ScenarioConfig, outdir: Path):
    try:
        result = run_scenario(cfg)
    except SafetyViolation as exc:
        return cfg, None, str(exc)
    emit_outputs(result, outdir)
    return cfg, result.report, None


COMPARISON_FIELDS = ["demand", "seed", "treatment", "economy", "economy_std", "equivalent_fuel",
                     "fuel_per_km", "travel_time", "effort"]


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    jobs = [base.with_(scenario=s, demand=d, seed=seed)
            for d in args.demand for seed in args.seed for s in SCENARIOS]
    dirs = [args.out / c.scenario / c.demand / f"seed{c.seed}" for c in jobs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs, dirs))
    else:
        results = [_sweep_one(c, o) for c, o in zip(jobs, dirs)]
    status = EXIT_OK
    reports = {}
    for cfg, rep, err in results:
        if err is not None:
            print(f"{cfg.scenario} {cfg.demand} seed {cfg.seed}: safety violation: {err}", file=sys.stderr)
            status = EXIT_INVARIANT
            continue
        reports[(cfg.scenario, cfg.demand, cfg.seed)] = rep
        if rep.invariant_failures:
            status = EXIT_INVARIANT
        print(f"{cfg.scenario:9s} {cfg.demand:7s} seed {cfg.seed}: "
              f"{len(rep.vehicles)} vehicles, stops {rep.stops['all']}, "
              f"{'; '.join(rep.invariant_failures) or 'OK'}")
    rows = []
    for d in args.demand:
        for seed in args.seed:
            b = reports.get(("baseline", d, seed))
            for s in ("isolated", "corridor"):
                t = reports.get((s, d, seed))
                if b is None or t is None or not b.vehicles or not t.vehicles:
                    continue
                rows.append(compare_runs(b, t))
    args.out.mkdir(parents=True, exist_ok=True)
    with (args.out / "comparison.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, COMPARISON_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
    (args.out / "comparison.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    print(f"\n{'demand':8s}{'seed':>5s} {'treatment':10s}{'economy %':>11s}{'std %':>8s}")
    for r in rows:
        print(f"{r['demand']:8s}{r['seed']:5d} {r['treatment']:10s}{r['economy']:11.2f}{r['economy_std']:8.2f}")
    return status


def cmd_build_table(args) -> int:
    cfg = load_config(args.config)
    table = build_pareto_table(TableGrid(), cfg.powertrain)
    path = table.save(args.out)
    print(f"table {table.engine.shape} written to {path} "
          f"({int((~table.feasible).sum())} infeasible cells)")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all(args.seed)
    for r in results:
        print(r.line())
    if args.out is not None:
        args.out.write_text(json.dumps([r.__dict__ for r in results], indent=1) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "build-table": cmd_build_table, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
