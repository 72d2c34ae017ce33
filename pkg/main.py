import argparse
import logging
import sys
from dataclasses import fields
from typing import List, Optional

import all_commands
from all_commands import EXIT_OK, EXIT_USAGE
from run_config import FIELD_HELP, RunConfig, RunConfigError, load_config_file

# Configure logging
logger = logging.getLogger("sffspec_logger")

_CONTROL_ARGS = ("command", "handler", "command_defaults", "verbose", "quiet")


def _option_parser() -> argparse.ArgumentParser:
    """Shared parser with one flag per RunConfig field; unset flags stay out of the namespace."""
    parser = argparse.ArgumentParser(add_help=False)
    defaults = RunConfig()
    group = parser.add_argument_group("settings")
    for f in fields(RunConfig):
        if f.name == "inputs":
            continue
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        help_text = f"{FIELD_HELP.get(f.name, f.name)} (default: {default!r})"
        if f.type is bool:
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS, help=help_text)
        else:
            group.add_argument(flag, dest=f.name, type=f.type, default=argparse.SUPPRESS,
                               metavar=f.name.upper(), help=help_text)
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    parser.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sffspec",
        description="Pitch-synchronous SFF spectrograms, GCI detection and emotion classification",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    all_commands.register(subparsers, _option_parser())
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(message)s",
                        force=True)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    configure_logging(args.verbose, args.quiet)
    flags = {k: v for k, v in vars(args).items() if k not in _CONTROL_ARGS}
    if not flags.get("inputs"):
        flags.pop("inputs", None)

    try:
        file_values = load_config_file(flags["config"]) if flags.get("config") else None
        config = RunConfig.from_sources(args.command_defaults, file_values, flags)
    except RunConfigError as e:
        print(f"run_config: {e}", file=sys.stderr)
        return EXIT_USAGE

    return all_commands.dispatch(args.handler, config)


if __name__ == "__main__":
    sys.exit(main())
