# lane.py

"""
Command-line entry point.

    python src/lane.py <command> --config configs/default.toml [--seed N] [--set key.path=value]

Exit codes: 0 ok, 1 user error (bad input, config or missing artifact), 2 internal error.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from config import load_config
from errors import LaneError
from harness import COMMANDS, run_command
from logger import logger

EXIT_OK, EXIT_USER_ERROR, EXIT_INTERNAL_ERROR = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lane",
        description="Preference-aligned sequential recommendation with LLM explanations.",
    )
    parser.add_argument("command", choices=list(COMMANDS), help="pipeline step to run")
    parser.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the global seed")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key, e.g. --set alignment.h=2 (repeatable)",
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides, args.seed)
        output = run_command(args.command, config)
    except LaneError as exc:
        logger.error(f"❌ {exc}")
        return EXIT_USER_ERROR
    except Exception:
        logger.exception(f"❌ Internal error while running `lane {args.command}`")
        return EXIT_INTERNAL_ERROR
    logger.info(f"✅ lane {args.command} finished: {output}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
