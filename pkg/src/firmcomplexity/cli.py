"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 computation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .exceptions import ComputeError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_COMPUTE = 0, 1, 2

_STAGE_HELP = {
    "ingest": "load and validate inputs, filter persistent firms",
    "blocks": "run through block detection",
    "indicators": "run through firm indicators",
    "regress": "run through the regression tables",
    "figures": "run through figure data",
    "run": "full pipeline",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="firmcomplexity", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in _STAGE_HELP.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--seed", type=int, help="override the block-detection seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--threads", type=int, help="parallel workers for block detection")
    p = sub.add_parser("synth", help="write a synthetic dataset with planted structure")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", choices=("small", "full"), default="small")
    p.add_argument("--firms", type=int, help="override the number of firms")
    p.add_argument("--products", type=int, help="override the number of products")
    p.add_argument("--threads", type=int, help="accepted for symmetry; generation is serial")
    p.add_argument("--config", help="JSON file of generator parameters")
    return parser


def _synth(args):
    import json

    from .synth import SynthConfig, generate, write_dataset

    params = {}
    if args.config:
        with open(args.config) as fh:
            params = json.load(fh)
    params["seed"] = args.seed
    if args.firms is not None:
        params["n_firms"] = args.firms
    if args.products is not None:
        params["n_products"] = args.products
    cfg = SynthConfig.full_scale(**params) if args.scale == "full" else SynthConfig.from_dict(
        params)
    economy = generate(cfg)
    write_dataset(economy, args.out)
    print(f"wrote synthetic dataset to {args.out}")


def _stage(args):
    from .pipeline import load_config, run_pipeline

    cfg = load_config(args.config, seed=args.seed, out=args.out, threads=args.threads)
    stop = "figures" if args.command == "run" else args.command
    report = run_pipeline(cfg, stop_after=stop)
    print(f"{', '.join(report.stages)} complete; outputs in {report.out}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            _synth(args)
        else:
            _stage(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ComputeError, ArithmeticError, MemoryError) as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (OSError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
