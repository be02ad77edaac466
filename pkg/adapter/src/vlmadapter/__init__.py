"""Deterministic HTTP stand-in for a vision-language model runtime."""

from .service import (
    GENERATE_PATH,
    HEALTH_PATH,
    MISS_HEADER,
    AdapterConfig,
    AdapterError,
    RequestError,
    canned_key,
    echo_digest,
    echo_text,
    load_canned,
    make_server,
    parse_generate_body,
    serve,
)

__version__ = "0.1.0"

__all__ = [
    "GENERATE_PATH",
    "HEALTH_PATH",
    "MISS_HEADER",
    "AdapterConfig",
    "AdapterError",
    "RequestError",
    "canned_key",
    "echo_digest",
    "echo_text",
    "load_canned",
    "make_server",
    "parse_generate_body",
    "serve",
    "__version__",
]
