"""memctl stdio server entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

import anyio

from app.config import Settings, load_settings
from app.routes import router
from app.server import StdioServer
from services.codec import canonical_text
from services.container import AppContainer

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def configure_logging(level: str) -> None:
    """stdout carries JSON-RPC, so logs always go to stderr."""

    if not logging.getLogger().handlers:
        logging.basicConfig(level=level.upper(), format=LOG_FORMAT, stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memctl-server", description="Developer-memory control server (stdio JSON-RPC).")
    parser.add_argument("--config", help="JSON config file (defaults to $MEMCTL_CONFIG)")
    parser.add_argument("--print-tools", action="store_true", help="print the tool list as canonical JSON and exit")
    return parser


def create_server(settings: Optional[Settings] = None) -> StdioServer:
    settings = settings or load_settings()
    return StdioServer(AppContainer(settings))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_tools:
        sys.stdout.write(canonical_text({"tools": router.list_tools()}) + "\n")
        return 0
    settings = load_settings(args.config)
    configure_logging(settings.log_level)
    anyio.run(create_server(settings).serve)
    return 0


if __name__ == "__main__":
    sys.exit(main())
