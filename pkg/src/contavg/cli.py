"""Command line entry point.

    contavg run --config cfg.json [--output-dir DIR]
    contavg validate --config cfg.json
    contavg report --input table.csv --format {csv,md}

Exit codes: 0 success, 1 a check failed, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys

from .experiments import ConfigError, ExperimentConfig, run_experiment, write_result

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="contavg", description="continuous averaging experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir", help="override output.dir of the config")
    v = sub.add_parser("validate", help="check a JSON config without running it")
    v.add_argument("--config", required=True)
    rep = sub.add_parser("report", help="render a result CSV")
    rep.add_argument("--input", required=True)
    rep.add_argument("--format", choices=("csv", "md"), default="md")
    return p


def markdown_table(text: str) -> str:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return ""
    out = ["| " + " | ".join(rows[0]) + " |", "|" + "---|" * len(rows[0])]
    out += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    return "\n".join(out) + "\n"


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "report":
        try:
            with open(args.input, newline="") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"error: cannot read {args.input}: {exc.strerror}", file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(text if args.format == "csv" else markdown_table(text))
        return EXIT_OK
    try:
        cfg = ExperimentConfig.from_json(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: valid {cfg.experiment} config")
        return EXIT_OK
    if args.output_dir:
        cfg.output_dir = args.output_dir
    try:
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    paths = write_result(result, cfg.output_dir)
    print(result.summary())
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
