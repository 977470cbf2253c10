import argparse
import logging
import os
import sys
from typing import Optional, Sequence

from sdtm.commands import cost, evaluate, generate, inspect, selftest, sweep, train
from sdtm.errors import IoError, SDTMError

logger = logging.getLogger(__name__)

COMMANDS = (train, generate, evaluate, selftest, inspect, sweep, cost)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdtm",
        description="Few-shot image generation with textural modulation and structural/frequency discriminators",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (env SDTM_LOG_LEVEL)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (args.log_level or os.environ.get("SDTM_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except SDTMError as e:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return IoError.exit_code


if __name__ == "__main__":
    sys.exit(main())
