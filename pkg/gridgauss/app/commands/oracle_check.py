import argparse

from gridgauss.app.commands.common import common_parser, emit, write_report
from gridgauss.app.core.grid import GridShape
from gridgauss.app.core.oracle import DEFAULT_TOLERANCE, run_cross_checks
from gridgauss.app.utils.logging_config import get_command_logger


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "oracle-check", parents=[common_parser()], help="Cross-check sparse operations against the dense oracle"
    )
    parser.add_argument("--seeds", type=int, default=50, help="Number of randomized instances")
    parser.add_argument("--max-size", default="8x8", help="Largest grid HxW")
    parser.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    parser.add_argument("--report", default=None)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    """Exit 0 iff every cross-check passes."""
    log = get_command_logger("oracle-check")
    first = args.seed or 0
    report = run_cross_checks(range(first, first + args.seeds), GridShape.parse(args.max_size), args.tolerance)
    write_report(args.report or args.out, report)
    if not report.passed:
        log.error(f"{report.failures} oracle cross-checks failed", extra={"failures": report.failures})
    emit({"passed": report.passed, "cases": len(report.cases), "failures": report.failures})
    return 0 if report.passed else 1
