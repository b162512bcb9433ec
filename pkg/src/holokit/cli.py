"""Command line entry point: one experiment per invocation.

Exit codes: 0 success, 2 schema error, 3 non-convergence, 4 invariant
violation, 5 precondition failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    AmbiguousDimensionError,
    ChartConstructionError,
    HolokitError,
    InsufficientPrecisionError,
    InsufficientSqueezingError,
    InvariantViolationError,
    MonotonicityViolationError,
    NonConvergentLimitError,
    PreconditionError,
    SchemaError,
    StabilityError,
    TrappedOrbitError,
)
from .reports import EXIT_INVARIANT, EXIT_NONCONVERGENT, EXIT_OK, EXIT_PRECONDITION, EXIT_SCHEMA, VERBS, ExperimentConfig, run


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, SchemaError):
        return EXIT_SCHEMA
    if isinstance(exc, (NonConvergentLimitError, TrappedOrbitError,
                        AmbiguousDimensionError, InsufficientSqueezingError,
                        ChartConstructionError, InsufficientPrecisionError,
                        StabilityError)):
        return EXIT_NONCONVERGENT
    if isinstance(exc, (InvariantViolationError, MonotonicityViolationError)):
        return EXIT_INVARIANT
    if isinstance(exc, PreconditionError):
        return EXIT_PRECONDITION
    raise exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="holokit",
                                     description="Kobayashi-geometry experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run one experiment from a TOML config")
    runp.add_argument("config", help="path to the config file")
    runp.add_argument("--output", help="write the JSON report here", default=None)
    sub.add_parser("verbs", help="list the available experiment verbs")
    args = parser.parse_args(argv)

    if args.command == "verbs":
        for v in VERBS:
            print(v)
        return EXIT_OK

    try:
        config = ExperimentConfig.from_file(args.config)
        report = run(config)
    except HolokitError as exc:
        code = exit_code_for(exc)
        print(f"error[{code}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    text = report.to_json()
    out_path = args.output or config.output
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
