"""Command line entry point for the adapter service."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .service import (
    DEFAULT_FALLBACK_TEXT,
    MODES,
    AdapterConfig,
    AdapterError,
    load_canned,
    serve,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlm-adapter",
        description="Serve a deterministic mock (or passthrough) model backend.",
    )
    parser.add_argument("--mode", choices=MODES, default="mock_echo")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--canned-file", help="JSON map of request hash to reply")
    parser.add_argument(
        "--fallback",
        default=DEFAULT_FALLBACK_TEXT,
        help="reply for canned misses",
    )
    parser.add_argument("--upstream", default="", help="real model server base url")
    parser.add_argument("--model-name", default="", help="name reported in replies")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> AdapterConfig:
    if args.mode == "mock_canned" and not args.canned_file:
        raise AdapterError("mock_canned mode requires --canned-file")
    canned = load_canned(args.canned_file) if args.canned_file else {}
    return AdapterConfig(
        mode=args.mode,
        canned=canned,
        fallback_text=args.fallback,
        upstream_url=args.upstream,
        model_name=args.model_name,
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = config_from_args(args)
    except AdapterError as exc:
        logging.getLogger(__name__).error("%s", exc)
        return 2
    try:
        serve(config, args.port, args.host)
    except KeyboardInterrupt:
        pass
    except OSError as exc:
        logging.getLogger(__name__).error("cannot serve: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
