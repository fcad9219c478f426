"""CLI and HTTP front ends over the analysis engine."""
from .cli import cli_dispatch, main
from .service import (
    SessionRecord,
    build_engine,
    create_app,
    request_meta,
    response_envelope,
    serve,
)

__all__ = [
    "SessionRecord",
    "build_engine",
    "cli_dispatch",
    "create_app",
    "main",
    "request_meta",
    "response_envelope",
    "serve",
]
