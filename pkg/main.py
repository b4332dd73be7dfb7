import logging
import sys
from typing import List, Optional

from mttrack import __version__
from mttrack.commands import COMMANDS
from mttrack.core.config import settings
from mttrack.core.error_handlers import RaisingArgumentParser, general_exception_handler, tracking_exception_handler
from mttrack.core.exceptions import EXIT_OK, BaseTrackingException
from mttrack.core.logging_config import setup_logging

logger = logging.getLogger(__name__)


def build_parser() -> RaisingArgumentParser:
    parser = RaisingArgumentParser(
        prog="mttrack",
        description="Single-object tracking with temporal correlation and a mutual transformer",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON run config; flags override its values")
    parser.add_argument("--seed", type=int, help="Seed for model init, sampling and synthesis")
    parser.add_argument("--out", help=f"Output directory (default {settings.OUTPUT_DIR})")
    parser.add_argument("--threads", type=int, help="Worker threads for per-sequence work")
    parser.add_argument("--log-level", default=None, help=f"Logging level (default {settings.LOG_LEVEL})")

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=RaisingArgumentParser)
    subparsers.required = True
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.log_level)
        logger.debug(f"Running '{args.command}'")
        return args.handler(args) or EXIT_OK
    except BaseTrackingException as exc:
        return tracking_exception_handler(exc)
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return 130
    except Exception as exc:
        # SystemExit from --help/--version passes through untouched
        return general_exception_handler(exc, context="command line")


if __name__ == "__main__":
    sys.exit(main())
