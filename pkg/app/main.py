"""
Command-line entry point: `run --config PATH` executes one experiment, `selftest` runs the fast checks.
"""
import argparse
import logging
import sys
from typing import List, Optional

from affine_ifs.async_orchestrator import set_thread_budget
from app.config import settings
from app.reports.writers import render_summary
from app.services import ExperimentExecutionError, ExperimentValidationError, run_from_path, run_selftest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affine-ifs", description="Dimension experiments for affine IFS measures")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto; default AFFDIM_THREADS)")
    parser.add_argument("--quiet", action="store_true", help="only log warnings and skip the summary")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the experiment described by a JSON config")
    run.add_argument("--config", required=True, help="path to the experiment config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="report path (overrides the config 'output')")
    run.add_argument("--threads", type=int, default=None, dest="run_threads", help=argparse.SUPPRESS)
    run.add_argument("--quiet", action="store_true", dest="run_quiet", help=argparse.SUPPRESS)

    commands.add_parser("selftest", help="run the fast acceptance checks")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    quiet = args.quiet or getattr(args, "run_quiet", False)
    threads = getattr(args, "run_threads", None)
    threads = args.threads if threads is None else threads

    logging.basicConfig(
        level=logging.WARNING if quiet else settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        set_thread_budget(settings.THREADS if threads is None else threads)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    if args.command == "selftest":
        return run_selftest()

    try:
        report = run_from_path(args.config, seed=args.seed, out=args.out)
    except ExperimentValidationError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ExperimentExecutionError as e:
        print(f"experiment failed: {e}", file=sys.stderr)
        return EXIT_NUMERIC

    if not quiet:
        print(render_summary(report))
    return EXIT_OK


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
