"""``kkcheck`` command line front end."""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONSISTENCY, EXIT_IO = 0, 1, 2, 3, 4
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kkcheck", description="Run Kaluza-Klein verification suites and emit reports.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("suite", help="run a named suite")
    s.add_argument("name", help="lie, forms, geometry, fibration, variational or all")
    s.add_argument("--group", default="su2", help="structure group tag: u1 or su2 (default su2)")
    s.add_argument("--seed", type=_u64, default=0)
    s.add_argument("--tol", type=float, default=None, help="override every per-check tolerance")
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--out", default=None, help="output path (default stdout)")
    s.add_argument("--format", default="json", choices=("json", "csv"))
    s.add_argument("--threads", type=int, default=1, help="quadrature worker threads (results do not depend on it)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # single-threaded BLAS keeps reductions bit-stable; must precede the numpy import
    for var in _THREAD_VARS:
        os.environ.setdefault(var, "1")
    from . import report, variational
    from .geometry import ConsistencyError

    try:
        cfg = report.SuiteConfig(args.name, args.group, args.seed, args.tol, args.samples, args.out, args.format)
        if args.threads < 1:
            raise report.UsageError("threads must be a positive integer")
    except report.UsageError as exc:
        print(f"kkcheck: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    variational.set_threads(args.threads)
    try:
        rep = report.run_suite(cfg)
    except report.SuiteConsistencyError as exc:
        print(f"kkcheck: internal consistency failure in {exc.check}: {exc.cause}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except ConsistencyError as exc:
        print(f"kkcheck: internal consistency failure: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    try:
        report.emit_report(rep, cfg.out, cfg.format, stream=sys.stdout)
    except OSError as exc:
        print(f"kkcheck: cannot write report: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if rep.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
