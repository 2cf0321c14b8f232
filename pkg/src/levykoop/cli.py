"""Command-line entry point: ``levykoop <verb> --config FILE [--seed N] [--out DIR] [--threads N]``."""
import argparse
import logging
import sys

from . import pipeline
from .config import ConfigError

VERBS = ("simulate", "learn", "identify", "solve", "compare", "pipeline")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="levykoop",
        description="Learn SDE coefficients from snapshot data and compute exit statistics.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True,
                       help="YAML config file, or the name of a bundled config (e.g. double_well)")
        p.add_argument("--seed", type=int, default=None, help="overrides simulation.seed")
        p.add_argument("--out", default=None, help="output directory (default: outputs.directory)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for simulation")
        p.add_argument("-q", "--quiet", action="store_true")
        if verb == "solve":
            p.add_argument("--model", choices=("true", "learned", "both"), default="both")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print(f"levykoop {args.verb}: [config] seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.threads < 1:
        print(f"levykoop {args.verb}: [config] --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = pipeline.load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"levykoop {args.verb}: [config] {exc}", file=sys.stderr)
        return 2
    try:
        if args.verb == "pipeline":
            pipeline.run_pipeline(cfg, args.out, args.threads)
        elif args.verb == "simulate":
            pipeline.run_stage("simulate", pipeline.simulate, cfg, args.out, threads=args.threads)
        elif args.verb == "solve":
            which = ("true", "learned") if args.model == "both" else (args.model,)
            pipeline.run_stage("solve", pipeline.solve, cfg, args.out, which=which)
        else:
            pipeline.run_stage(args.verb, getattr(pipeline, args.verb), cfg, args.out)
    except pipeline.StageError as exc:
        print(f"levykoop {args.verb}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
