#!/usr/bin/env python3
"""
conefix command line

Loads a problem file (or a bundled fixture by name), runs one subcommand and
prints the JSON report on stdout. Progress and a human-readable summary go to
stderr through the logger.

Subcommands:
- check: contraction condition on sampled pairs
- estimate: minimal constant, plain-condition constant and Lipschitz ratio
- solve: fixed point, certificate and uniqueness probe
- verify: cone, normality and metric axiom suites, injectivity spot check
- all: everything above

Exit status: 0 success, 1 violations or divergence, 2 input error.

Usage:
    conefix solve example_3_2
    conefix all problems/mine.json --seed 7 --samples 100000 --out report.json
"""

import argparse
import logging
import sys
from dataclasses import replace
from datetime import datetime

from src.common.utils import DEFAULT_SEED, check_sample_count, get_fixture_names, setup_logging
from src.cli_harness.utils import (
    SUBCOMMANDS,
    ProblemSyntaxError,
    ProblemValidationError,
    load_problem,
    run,
    write_report,
)
from src.maps.utils import MapEvaluationError, MapSyntaxError, UnknownIdentifierError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT_ERROR = 2

INPUT_ERRORS = (
    FileNotFoundError,
    ProblemSyntaxError,
    ProblemValidationError,
    MapSyntaxError,
    UnknownIdentifierError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conefix",
        description="Certified fixed points of T-Kannan and T-Chatterjea contractions "
        "on cone metric spaces.",
        epilog=f"Bundled problems: {', '.join(get_fixture_names())}",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("problem", help="Problem JSON file or bundled problem name")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--tol", type=float, default=None, help="Overrides solve.tol")
    parser.add_argument("--max-iter", type=int, default=None, help="Overrides solve.max_iter")
    parser.add_argument(
        "--samples", type=int, default=None, help="Overrides both sampling budgets"
    )
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default=None, help="Also write the JSON report here")
    parser.add_argument("--trace-out", default=None, help="Write the solver trace as parquet")
    parser.add_argument("--timings", action="store_true", help="Keep wall-clock timings")
    parser.add_argument("--progress", action="store_true", help="Show progress bars")
    parser.add_argument("--quiet", action="store_true", help="Log warnings only")
    return parser


def apply_overrides(problem, args):
    """
    Applies the command-line overrides to a loaded problem.
    """
    overrides = {}
    if args.tol is not None:
        if not args.tol > 0:
            raise ProblemValidationError("--tol", f"must be > 0, got {args.tol}")
        overrides["tol"] = args.tol
    if args.max_iter is not None:
        check_sample_count(args.max_iter, name="--max-iter")
        overrides["max_iter"] = args.max_iter
    if args.samples is not None:
        check_sample_count(args.samples, name="--samples")
        overrides["sample_pairs"] = args.samples
        overrides["axiom_samples"] = args.samples
    check_sample_count(args.workers, name="--workers")

    return replace(problem, **overrides) if overrides else problem


def log_summary(report):
    if report.contraction is not None:
        c = report.contraction
        logger.info(
            "  - %s check: %d violation(s) in %d pairs",
            c.kind.value,
            c.violation_count,
            c.pairs_checked,
        )
    if report.estimate is not None:
        logger.info("  - Estimated minimal constant: %s", report.estimate["min_constant"])
    if report.solve is not None:
        s = report.solve
        logger.info(
            "  - Fixed point: %s after %d iteration(s) (%s)", s.u.to_list(), s.iterations, s.mode.value
        )
    if report.cone_axioms is not None:
        logger.info(
            "  - Axiom suites: cone %s, normality %s, metric %s",
            "passed" if report.cone_axioms.passed else "FAILED",
            "passed" if report.normality.passed else "FAILED",
            "passed" if report.metric_axioms.passed else "FAILED",
        )


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging("src", logging.WARNING if args.quiet else logging.INFO)

    logger.info("=" * 80)
    logger.info("CONEFIX %s: %s", args.subcommand.upper(), args.problem)
    logger.info("=" * 80)
    logger.info(f"Started at: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")

    try:
        logger.info("Step 1/3: Loading problem...")
        problem = apply_overrides(load_problem(args.problem), args)
        logger.info("✓ Problem '%s' loaded", problem.name)
    except INPUT_ERRORS + (ValueError,) as e:
        logger.error("=" * 80)
        logger.error("INVALID INPUT")
        logger.error("=" * 80)
        logger.error(f"Error: {str(e)}")
        sys.exit(EXIT_INPUT_ERROR)

    try:
        logger.info("Step 2/3: Running %s...", args.subcommand)
        report = run(
            problem,
            args.subcommand,
            seed=args.seed,
            workers=args.workers,
            progress=args.progress,
            timings=args.timings,
        )
        logger.info("✓ %s completed", args.subcommand.capitalize())

        logger.info("Step 3/3: Writing report...")
        text = write_report(report, out=args.out, trace_out=args.trace_out)
        print(text)
        logger.info("✓ Report written%s", f" to {args.out}" if args.out else "")
    except (MapEvaluationError, RuntimeError, ValueError, OSError) as e:
        logger.error("=" * 80)
        logger.error("RUN FAILED")
        logger.error("=" * 80)
        logger.error(f"Error occurred at: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
        logger.error(f"Error: {str(e)}")
        sys.exit(EXIT_FAILED)

    log_summary(report)
    if not report.passed:
        logger.warning("=" * 80)
        logger.warning("%d FAILURE(S)", len(report.failures))
        logger.warning("=" * 80)
        for failure in report.failures:
            logger.warning("  - %s", failure)
        sys.exit(EXIT_FAILED)

    logger.info("=" * 80)
    logger.info("ALL CHECKS PASSED")
    logger.info("=" * 80)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
