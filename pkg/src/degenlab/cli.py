"""Command-line entry point: ``degenlab solve|sweep|verify|lab|report``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (overrides solver.seed)")
    common.add_argument("--out", help="output root (default: output.root, then $DEGENLAB_OUT, then ./runs)")
    common.add_argument("--threads", type=int, help="thread cap for the numerical libraries")
    common.add_argument("--strict", action="store_true", help="stop at the first failing stage")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="degenlab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "solve at the final eps of the schedule"),
        ("sweep", "run the eps continuation and the requested checks"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("config")
    p = sub.add_parser("verify", parents=[common], help="run the verify block on a stored solution")
    p.add_argument("config")
    p.add_argument("solution")
    p = sub.add_parser("lab", parents=[common], help="standalone inequality suites")
    p.add_argument("suite", choices=["troisi"])
    p.add_argument("config")
    p = sub.add_parser("report", parents=[common], help="render figures for a finished run")
    p.add_argument("run_dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    # heavy imports after the thread cap is in place
    from .config import ConfigError, parse_config
    from .runner import RunManifest, StageFailure, run

    if args.command == "report":
        from .plotting import render_run

        manifest = RunManifest.load(args.run_dir)
        figures = render_run(args.run_dir)
        manifest.refresh_inventory()
        manifest.save()
        for f in figures:
            print(f)
        return 0

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    command = "lab" if args.command == "lab" else args.command
    try:
        manifest = run(cfg, command, out=args.out, seed=args.seed, strict=args.strict, solution_path=getattr(args, "solution", None))
    except StageFailure as exc:
        print(exc, file=sys.stderr)
        return 1
    print(manifest.run_dir)
    for st in manifest.stages:
        line = f"{st['status']:>8}  {st['name']}"
        if st["message"]:
            line += f"  ({st['message']})"
        print(line)
    return manifest.exit_status


if __name__ == "__main__":
    sys.exit(main())
