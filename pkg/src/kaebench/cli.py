"""Command-line entry point: ``kaebench run | compare | validate``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
``KAEBENCH_OUTPUT_DIR`` overrides the output directory of ``run`` and
``KAEBENCH_JOBS`` sets how many processes run independent jobs.
"""

import argparse
import csv
import json
import sys

from .config import ExperimentConfig
from .exceptions import ConfigError, KaeError, NumericalFailure
from .runner import METRIC_FILES, check_config, compare_runs, format_cell, run_pipeline


def _parser():
    parser = argparse.ArgumentParser(prog="kaebench",
                                     description="Kernel advantage estimation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the pipeline described by a config file")
    run.add_argument("config")
    run.add_argument("--output-dir", help="artifact directory (overrides the config)")
    run.add_argument("--jobs", type=int, help="parallel processes (default KAEBENCH_JOBS or 1)")
    cmp_ = sub.add_parser("compare", help="summarise finished runs against a reference")
    cmp_.add_argument("dirs", nargs="*")
    cmp_.add_argument("--metric", required=True, choices=sorted(METRIC_FILES))
    cmp_.add_argument("--reference", required=True, help="reference algorithm label")
    cmp_.add_argument("--steps", type=int, nargs="+", help="only these steps")
    cmp_.add_argument("--output", help="write the table here instead of stdout")
    val = sub.add_parser("validate", help="parse and check a config file")
    val.add_argument("config")
    return parser


def _compare(args):
    rows = compare_runs(args.dirs, args.metric, args.reference,
                        steps=set(args.steps) if args.steps else None)
    header = ("algorithm", "step", args.metric, "se", "n", f"reduction_vs_{args.reference}")
    fh = open(args.output, "w", encoding="utf-8", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    finally:
        if args.output:
            fh.close()


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        if args.command == "validate":
            config = ExperimentConfig.from_file(args.config)
            check_config(config)
            print(f"{args.config}: ok ({config['pipeline']}, "
                  f"{len(config['algorithms'])} algorithm(s), {len(config['seeds'])} seed(s))")
        elif args.command == "run":
            config = ExperimentConfig.from_file(args.config)
            out = run_pipeline(config, output_dir=args.output_dir, jobs=args.jobs)
            print(out)
        else:
            _compare(args)
    except NumericalFailure as exc:
        print(f"kaebench: numerical failure: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, indent=2, default=str), file=sys.stderr)
        return 2
    except (ConfigError, KaeError, ValueError, OSError) as exc:
        print(f"kaebench: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
