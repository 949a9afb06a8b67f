"""Command-line entry point: ``sgdvar <subcommand> [--config PATH] [--seed N] [--workers N] [--out DIR]``.

Exit codes: 0 success, 2 hard invariant failure, 3 configuration error.
"""

import argparse
import dataclasses
import json
import sys

from . import harness

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 2, 3


def build_parser():
    parser = argparse.ArgumentParser(prog="sgdvar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for exp in harness.Experiment:
        p = sub.add_parser(exp.value)
        p.add_argument("--config", help="JSON or TOML experiment config")
        p.add_argument("--seed", type=int, help="master seed (overrides config and SGDVAR_SEED)")
        p.add_argument("--workers", type=int, help="worker processes (overrides SGDVAR_WORKERS)")
        p.add_argument("--out", help="output directory")
    return parser


def resolve_config(args, environ=None):
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    cfg = harness.env_overrides(cfg, environ)
    kw = {"experiment": harness.Experiment(args.command)}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.workers is not None:
        kw["workers"] = args.workers
    if args.out is not None:
        kw["out"] = args.out
    try:
        return dataclasses.replace(cfg, **kw)
    except (TypeError, ValueError) as exc:
        raise harness.ConfigError(str(exc)) from None


def _summary(cfg, result):
    exp = cfg.experiment
    if exp is harness.Experiment.IDEALIZED:
        table, _ = result
        return {r["algorithm"]: r["mean_excess"] for r in table.rows}
    if exp is harness.Experiment.DLN_SWEEP:
        return harness.summarize_ratios(result)
    if exp is harness.Experiment.THEORY:
        return {
            "invariants": {k: v["pass"] for k, v in result["invariants"].items()},
            "lemma2_fraction": result["lemma2"]["fraction_holding"],
            "theorem1_decreasing": result["theorem1"]["strictly_decreasing"],
            "lemma1": result.get("lemma1", {}).get("verdict"),
        }
    if exp is harness.Experiment.ALGVAR:
        return {"inits": result["inits"]}
    return {"candidates": len(result[0])}


def main(argv=None, environ=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args, environ)
        result = harness.RUNNERS[cfg.experiment](cfg)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.InvariantError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVARIANT
    print(json.dumps(harness._jsonable(_summary(cfg, result)), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
