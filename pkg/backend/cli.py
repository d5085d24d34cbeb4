"""
PatchGraph command-line entry point.

- .env loading and logging bootstrap
- environment validation into effective settings
- subcommand dispatch with exit codes: 0 success, 1 domain error, 2 usage error
"""
import logging
import os
import shutil
import sys
from typing import Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

load_dotenv()

# Logging configuration; stdout stays reserved for command output
LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO").upper()
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'

logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format=LOG_FORMAT,
    handlers=[
        logging.StreamHandler(sys.stderr),
    ]
)

logger = logging.getLogger("patchgraph")
logger.setLevel(getattr(logging, LOG_LEVEL, logging.INFO))

from commands.common import Settings  # noqa: E402
from commands.router import build_parser  # noqa: E402
from services.errors import PatchGraphError  # noqa: E402


def _env_int(name: str, default: int, minimum: Optional[int] = None) -> int:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"{name}={raw!r} is not an integer; using {default}")
        return default
    if minimum is not None and value < minimum:
        logger.warning(f"{name}={value} is below {minimum}; using {default}")
        return default
    return value


def _validate_environment() -> Settings:
    """Read optional environment variables into the effective settings."""
    settings = Settings(
        data_dir=os.environ.get("PATCHGRAPH_DATA_DIR", "data"),
        seed=_env_int("PATCHGRAPH_SEED", 0),
        max_nodes=_env_int("PATCHGRAPH_MAX_NODES", 800, minimum=1),
        workers=_env_int("PATCHGRAPH_WORKERS", 1, minimum=1),
    )
    if shutil.which("git") is None:
        logger.debug("git not found on PATH; only commit dumps can be ingested")
    logger.debug(f"Effective settings: {settings.model_dump()}")
    return settings


def run(argv: Optional[Sequence[str]] = None) -> int:
    settings = _validate_environment()
    parser = build_parser(settings)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_usage(sys.stderr)
        return 2

    try:
        return handler(args, settings) or 0
    except PatchGraphError as e:
        logger.error(f"{args.command}: {type(e).__name__}: {e}")
        return 1
    except (FileNotFoundError, ValidationError, ValueError) as e:
        logger.error(f"{args.command}: {e}")
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
