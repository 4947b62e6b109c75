import logging
import sys

from .errors import FlonavError
from .plugins import FlonavArgumentParser, add_command_subparsers
from .version import version


def main() -> int:
    parser = FlonavArgumentParser(
        prog="flonav",
        description=(
            "flonav synthesizes furnished floor-plan scenes, samples planner demonstrations, trains a"
            " floor-plan-conditioned diffusion policy, and benchmarks navigation agents."
        ),
    )
    parser.add_argument("--version", action="store_true", help="print flonav's version and exit")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="log debug messages")
    verbosity.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    add_command_subparsers(parser)

    args = parser.parse_args()

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(name)s: %(levelname)s: %(message)s", stream=sys.stderr, force=True)

    if not hasattr(args, "func"):
        if args.version:
            print(version())
            return 0
        parser.print_help()
        return 1

    try:
        retval = args.func(args)
    except (FlonavError, FileNotFoundError) as e:
        sys.stderr.write(f"{parser.prog}: error: {e}\n")
        return 2
    if retval is None:
        retval = 0
    elif not isinstance(retval, int):
        retval = 0 if retval else 1

    return retval


if __name__ == "__main__":
    sys.exit(main())
