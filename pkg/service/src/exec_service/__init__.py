"""HTTP service exposing the query-executor wire protocol."""

from .app import create_app
from .backends import BackendError, ReferenceBackend, load_checkpoint
from .reference import SchemaError, SeedError, evaluate, parse_query, rank

__all__ = [
    "BackendError",
    "ReferenceBackend",
    "SchemaError",
    "SeedError",
    "create_app",
    "evaluate",
    "load_checkpoint",
    "parse_query",
    "rank",
]
