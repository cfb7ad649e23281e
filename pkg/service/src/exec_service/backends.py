"""Executor backends and checkpoint loading.

The service starts with the reference fuzzy executor unless the
EXEC_SERVICE_CHECKPOINT environment variable names a checkpoint file.  A
checkpoint is a JSON document:

    {"format": "exec-checkpoint", "kind": "<registered kind>", "tag": "..."}

Kinds register a constructor in _KINDS; the only built-in kind wraps the
reference executor under the checkpoint's tag, and a neural executor plugs
in by registering its own kind.  A configured checkpoint that fails to load
leaves the service without a backend: /health and /execute answer 503 until
it is fixed.  Loading happens once at startup; serving is stateless per
request after that.
"""

from __future__ import annotations

import json
import os

from . import reference


class BackendError(Exception):
    """Checkpoint missing, malformed, or of an unsupported kind."""


class ReferenceBackend:
    """Min/max fuzzy execution on the request's inline subgraph."""

    def __init__(self, tag="reference"):
        self.tag = tag

    def run(self, query, leaf_sets, index, top_n):
        memberships = reference.evaluate(index, query, leaf_sets)
        return reference.rank(memberships, top_n)


_KINDS = {
    "fuzzy-reference": lambda doc: ReferenceBackend(tag=doc.get("tag", "reference")),
}


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise BackendError(f"cannot read checkpoint {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BackendError(f"checkpoint {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "exec-checkpoint":
        raise BackendError(f"checkpoint {path!r} lacks the exec-checkpoint format marker")
    kind = doc.get("kind")
    build = _KINDS.get(kind)
    if build is None:
        raise BackendError(f"unsupported backend kind {kind!r}")
    return build(doc)


def load_from_env(env=None):
    """Resolve the startup backend: (backend, None) or (None, error)."""
    env = os.environ if env is None else env
    path = env.get("EXEC_SERVICE_CHECKPOINT")
    if not path:
        return ReferenceBackend(), None
    try:
        return load_checkpoint(path), None
    except BackendError as exc:
        return None, str(exc)
