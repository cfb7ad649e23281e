"""FastAPI app for the executor wire protocol.

POST /execute runs a query over an inline subgraph and returns scored
entities; GET /health reports the loaded backend.  Envelope violations are
400, requests that are well-formed but inconsistent (seeds outside the
subgraph, empty seed lists, wrong seed-list count) are 422, and a missing
backend is 503.  Scores are clamped to [0, 1] on the way out so the wire
invariant holds regardless of what a backend returns.
"""

from __future__ import annotations

import os
from typing import Annotated, List, Tuple

from fastapi import FastAPI, HTTPException, Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import backends, reference

Weight = Annotated[float, Field(ge=0.0, le=1.0)]


class Subgraph(BaseModel):
    entities: List[str]
    triples: List[Tuple[str, str, str]]


class ExecuteRequest(BaseModel):
    query: dict
    leaf_seeds: List[List[Tuple[str, Weight]]]
    subgraph: Subgraph
    top_n: Annotated[int, Field(ge=0)]
    # graph_ref: reserved for preloaded graphs; inline subgraphs only for now


def _leaf_sets(leaf_seeds, entities):
    sets = []
    for seeds in leaf_seeds:
        if not seeds:
            raise reference.SeedError("every leaf needs at least one seed")
        memberships = {}
        for ext, weight in seeds:
            if ext not in entities:
                raise reference.SeedError(f"seed {ext!r} is not in the subgraph's entity set")
            # duplicate ids keep their strongest weight
            if weight > memberships.get(ext, -1.0):
                memberships[ext] = weight
        sets.append(memberships)
    return sets


def create_app(env=None):
    backend, load_error = backends.load_from_env(env)
    app = FastAPI(title="exec-service")
    app.state.backend = backend
    app.state.load_error = load_error

    @app.exception_handler(RequestValidationError)
    async def _schema_violation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"detail": jsonable_encoder(exc.errors())})

    @app.get("/health")
    def health():
        if app.state.backend is None:
            raise HTTPException(503, f"backend unloaded: {app.state.load_error}")
        return {"status": "ok", "backend": app.state.backend.tag}

    @app.post("/execute")
    def execute(req: ExecuteRequest):
        if app.state.backend is None:
            raise HTTPException(503, f"backend unloaded: {app.state.load_error}")
        try:
            query = reference.parse_query(req.query)
        except reference.SchemaError as exc:
            raise HTTPException(400, str(exc)) from exc
        try:
            index = reference.SubgraphIndex(req.subgraph.entities, req.subgraph.triples)
            leaf_sets = _leaf_sets(req.leaf_seeds, index.entities)
            scores = app.state.backend.run(query, leaf_sets, index, req.top_n)
        except reference.SeedError as exc:
            raise HTTPException(422, str(exc)) from exc
        scores = [[ent, min(1.0, max(0.0, float(s)))] for ent, s in scores]
        return {"scores": scores, "executor_tag": app.state.backend.tag}

    return app


def main(argv=None):
    import uvicorn

    port = int(os.environ.get("EXEC_SERVICE_PORT", "8080"))
    uvicorn.run(create_app(), host="0.0.0.0", port=port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
