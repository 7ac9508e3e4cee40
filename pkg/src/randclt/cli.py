"""Command-line harness: ``randclt {simulate,clt,fclt,edf,rate,report}``."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import COMMANDS, bundled_configs, parse_config, resolve_config
from .empirical import write_trace
from .errors import ConfigError, RandcltError
from .experiments import run_experiment
from .report import emit, read_reports

OUT_ENV = "RANDCLT_OUT"
DEFAULT_OUT = "randclt-out"


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if cfg.output.get("dir"):
        return Path(cfg.output["dir"])
    return Path(DEFAULT_OUT)


def _run(args) -> int:
    try:
        cfg = parse_config(resolve_config(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if cfg.command != args.command:
        print(f"config {args.config} is a {cfg.command!r} experiment, not {args.command!r}",
              file=sys.stderr)
        return 2
    cfg = cfg.with_overrides(seed=args.seed, n_rep=args.reps, jobs=args.jobs)
    result = run_experiment(cfg)
    out = _out_dir(args, cfg)
    try:
        emit(result.record, out, result.rows)
        for name, (header, x, y) in result.traces.items():
            write_trace(out / f"{cfg.experiment}.{name}.csv", x, y, header)
    except (RandcltError, OSError) as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return 3
    for line in result.record.summary_lines():
        print(line)
    return 0 if result.record.passed else 1


def _report(args) -> int:
    status = 0
    for path in args.paths:
        try:
            records = read_reports(path)
        except RandcltError as exc:
            print(str(exc), file=sys.stderr)
            return 3
        for rec in records:
            for line in rec.summary_lines():
                print(line)
            status |= 0 if rec.passed else 1
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randclt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    names = ", ".join(sorted(bundled_configs()))
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=f"run a {cmd} experiment")
        p.add_argument("--config", required=True,
                       help=f"config file, or a bundled config name ({names})")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--reps", type=int, help="override N_rep")
        p.add_argument("--jobs", type=int, help="worker processes (does not change results)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.set_defaults(func=_run)
    p = sub.add_parser("report", help="re-render JSON-lines report files")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
