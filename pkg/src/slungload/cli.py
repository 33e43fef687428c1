"""Command-line entry point: ``slungload {simulate,plan,sweep}``.

Exit codes: 0 success, 1 configuration or input error, 2 run failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import (
    ConfigError, build_scenario, load_config, load_reference, trajectory_factory,
    write_dense, write_log,
)
from .controller import SolverFailed
from .evaluation import evaluate, open_loop_plan, parse_grid, sweep, write_reports
from .model import SingularConfiguration, hover_input
from .simulator import SimulationError

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


def _scenario(args):
    cfg = load_config(args.config)
    ref = load_reference(args.reference) if args.reference else None
    sc = build_scenario(cfg, ref, seed=args.seed, jitter_dt=args.jitter_dt or None)
    return cfg, ref, sc


def _report_paths(out: Path):
    return out.with_suffix(".report.csv"), out.with_suffix(".summary.txt")


def cmd_simulate(args) -> int:
    _, _, sc = _scenario(args)
    rep, log, _ = evaluate(sc, name=Path(args.config).stem)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        write_log(log, fh)
    rep_csv, summary = _report_paths(out)
    with open(rep_csv, "w", newline="") as fh:
        write_reports([rep], fh)
    summary.write_text(rep.summary())
    sys.stdout.write(rep.summary())
    return EXIT_OK


def cmd_plan(args) -> int:
    _, _, sc = _scenario(args)
    ol = open_loop_plan(sc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        write_dense(ol, fh, hover_input(sc.nominal_params))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.grid or not args.grid.strip():
        raise ConfigError("empty grid spec")
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg, ref, base = _scenario(args)
    cells = sweep(grid, base, trajectory=trajectory_factory(cfg, ref), keep_logs=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "reports.csv", "w", newline="") as fh:
        write_reports([c.report for c in cells], fh)
    for i, c in enumerate(cells):
        if c.log is not None:
            with open(out / f"cell_{i:02d}.csv", "w", newline="") as fh:
                write_log(c.log, fh)
    failed = [c for c in cells if c.report.error]
    for c in failed:
        print(f"cell {c.name} failed: {c.report.error}", file=sys.stderr)
    return EXIT_RUN if len(failed) == len(cells) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slungload", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", required=True, help="INI configuration file")
        sp.add_argument("--reference", help="waypoint CSV (t,x,y,z) overriding the configured trajectory")
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--seed", type=int, help="override the sensor noise seed")
        sp.add_argument("--jitter-dt", action="store_true", help="jitter the control period by ±20%%")

    common(sub.add_parser("simulate", help="closed-loop run with metrics"),
           "run log CSV; the report goes next to it")
    common(sub.add_parser("plan", help="open-loop benchmark plan"), "dense trajectory CSV")
    sp = sub.add_parser("sweep", help="payload mass / cable length / waypoint spacing grid")
    common(sp, "output directory")
    sp.add_argument("--grid", required=True, help='e.g. "m_l=0.5,1.0,1.5;l=1,2,3;dt=2"')
    return p


COMMANDS = {"simulate": cmd_simulate, "plan": cmd_plan, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, SolverFailed, SingularConfiguration) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
