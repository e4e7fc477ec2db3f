"""Command-line entry point.

Subcommands: ``train-compare``, ``theory-scaling``, ``ablate`` and ``report``.
Without ``--out``, runs land in ``$TAYLORIZED_OUT/<config name>`` (default root ``runs``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .experiments import EXIT_OK, report, run_experiment

OUT_ENV = "TAYLORIZED_OUT"
EXPECTED = {
    "train-compare": ("train-compare",),
    "theory-scaling": ("theory-scaling",),
    "ablate": ("ablation-width", "ablation-lr-param"),
}


def default_out(config: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / Path(config).stem


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taylorized", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPECTED:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<config name>)")
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        p.add_argument("--threads", type=int, help="worker threads for paired runs")
    p = sub.add_parser("report", help="re-render charts of a finished run and verify its manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="unused; accepted for symmetry")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        out = Path(args.out)
        if not out.is_dir():
            print(f"no such run directory: {out}", file=sys.stderr)
            return 2
        bad = report(out)
        for name in bad:
            print(f"hash mismatch: {name}", file=sys.stderr)
        return 1 if bad else EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 2
    out = args.out or default_out(args.config)
    code = run_experiment(args.config, out, EXPECTED[args.command], seed=args.seed, threads=args.threads)
    if code != EXIT_OK:
        print(f"failed; see {Path(out) / 'failure.json'}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
