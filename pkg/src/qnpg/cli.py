"""Command-line entry point: ``qnpg run --spec FILE`` and ``qnpg report --input FILE``.

Exit codes: 0 success, 2 validation error, 3 numerical divergence, 4 I/O error.
The worker count for multi-seed runs comes from ``QNPG_WORKERS`` (default 1).
"""

from __future__ import annotations

import argparse
import sys

from .experiments import ExperimentSpec, ReportError, execute, format_report, read_records, summarize
from .mdp import MdpValidationError
from .npg import NumericalDivergenceError

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _fail(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        spec = ExperimentSpec.load(args.spec)
        execute(spec)
    except FileNotFoundError as exc:
        return _fail(EXIT_IO, f"cannot read {exc.filename}")
    except NumericalDivergenceError as exc:
        return _fail(EXIT_DIVERGED, f"numerical divergence: {exc}")
    except (MdpValidationError, ValueError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, f"{exc.filename or ''}: {exc.strerror or exc}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        records = read_records(args.input)
    except FileNotFoundError as exc:
        return _fail(EXIT_IO, f"cannot read {exc.filename}")
    except ReportError as exc:
        return _fail(EXIT_INVALID, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, f"{exc.filename or ''}: {exc.strerror or exc}")
    print(format_report(summarize(records)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnpg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="execute an experiment spec (JSON)")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", help="summarize a results file")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
