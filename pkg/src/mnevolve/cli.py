"""Command-line entry point.

Usage::

    mnevolve run --config cfg.json --set scale=desk --out runs/ac
    mnevolve fit --set experiment=gaussian_check --out runs/g
    mnevolve evolve --out runs/g
    mnevolve sample --out runs/g
    mnevolve marginal --out runs/g --set 'marginal_grid=[-1,0,1]'
    mnevolve residuals --out runs/g

Stages after ``fit`` reread ``config.json`` from the run directory unless
``--config`` is given; ``--set`` overrides still apply on top.
"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from .config import ConfigError, build_config, parse_override
from .pipeline import (
    FILES,
    StageError,
    run_all,
    stage_evolve,
    stage_fit,
    stage_marginal,
    stage_residuals,
    stage_sample,
)

__all__ = ["main", "build_parser"]

STAGES = ("run", "fit", "evolve", "sample", "marginal", "residuals")


def build_parser():
    p = argparse.ArgumentParser(prog="mnevolve", description="Minimal neural evolution for diffusion processes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--experiment", choices=["langevin2d", "gpr_bayes", "allen_cahn", "gaussian_check"])
        sp.add_argument("--scale", choices=["paper", "desk"])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration field (value parsed as JSON)")
        sp.add_argument("--out", required=True, help="run directory")
        sp.add_argument("--from", dest="src", help="read earlier-stage artifacts from here (default: --out)")
        sp.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _load_config(args):
    file_values = {}
    path = args.config
    if path is None and args.command != "run" and args.command != "fit":
        candidate = os.path.join(args.src or args.out, FILES["config"])
        if os.path.exists(candidate):
            path = candidate
    if path is not None:
        with open(path) as fh:
            file_values = json.load(fh)
        if not isinstance(file_values, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    overrides = [parse_override(s) for s in args.set]
    if args.experiment:
        overrides.insert(0, ("experiment", args.experiment))
    if args.scale:
        overrides.insert(0, ("scale", args.scale))
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    return build_config(file_values=file_values, overrides=overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    src = args.src or args.out
    try:
        if args.command == "run":
            run_all(cfg, args.out)
        elif args.command == "fit":
            stage_fit(cfg, args.out)
        elif args.command == "evolve":
            stage_evolve(cfg, out=args.out, src=src)
        elif args.command == "sample":
            stage_sample(cfg, out=args.out, src=src)
        elif args.command == "marginal":
            stage_marginal(cfg, out=args.out, src=src)
        else:
            stage_residuals(cfg, out=args.out, src=src)
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 3
    except StageError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"stage failed: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
