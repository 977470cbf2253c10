import argparse

from sdtm.errors import EXIT_INVARIANT_FAILURE, EXIT_OK
from sdtm.selftest import run_selftest


def cmd_selftest(args: argparse.Namespace) -> int:
    items = run_selftest()
    for item in items:
        print(item.to_line())
    failed = [item.name for item in items if not item.passed]
    print(f"selftest: {len(items) - len(failed)} passed, {len(failed)} failed" + (f" ({', '.join(failed)})" if failed else ""))
    return EXIT_INVARIANT_FAILURE if failed else EXIT_OK


def register(subparsers) -> None:
    parser = subparsers.add_parser("selftest", help="Run the invariant battery")
    parser.set_defaults(handler=cmd_selftest)
