# Command-line entry point for gridgauss
import argparse
import logging
import sys
from typing import List, Optional

from gridgauss import __version__
from gridgauss.app.commands import COMMANDS
from gridgauss.app.config.settings import settings
from gridgauss.app.error_handlers import EXIT_OK, handle_exception
from gridgauss.app.utils.logging_config import configure_logging_from_env, setup_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridgauss",
        description="Structured Gaussians over image grids: fit, sample, condition, inspect and evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")
    parser.add_argument("--log-json", action="store_true", help="JSON log lines on stderr")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """
    Parse ``argv`` and run the selected subcommand.

    Returns the process exit code: 0 on success, 2 for usage errors and
    invalid arguments, 1 for numerical and runtime failures.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code is None else int(exc.code)

    if args.log_level or args.log_json:
        setup_logging(args.log_level or settings.log_level, args.log_json or settings.log_format == "json")
    else:
        configure_logging_from_env()

    logger.debug(f"Running {args.command}", extra={"command": args.command})
    try:
        return args.handler(args)
    except Exception as exc:
        return handle_exception(exc)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
