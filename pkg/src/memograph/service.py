"""HTTP surface over the memory graph for external agent stacks.

All mutations funnel through one writer lock and persist to the graph file;
reads run under the same lock so every response sees a consistent snapshot.
"""

from __future__ import annotations

import threading
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass
from typing import Optional

from fastapi import Depends, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .gateway import Trajectory
from .graph import GraphError, MemoryGraph
from .induction import InductionError, ScriptedAnalyst, update_memory_graph
from .optimizer import compute_gradients
from .retrieval import augment_prompt, rank_metas
from .scoring import HashedEmbedder, activate_subgraph, relevance, selection_distribution
from .tags import Segment, TagError

SCHEMA_VERSION = 1


@dataclass
class ServiceConfig:
    graph_path: str
    host: str = "127.0.0.1"
    port: int = 8321
    auth_token: Optional[str] = None
    read_only: bool = False
    write_queue_depth: int = 256
    top_n: int = 3
    learning_rate: float = 0.1
    temperature: float = 1.0


class GraphStore:
    """Single-writer holder for the graph and its on-disk copy."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.graph = MemoryGraph.load(config.graph_path)
        self.embedder = HashedEmbedder(self.graph.embedding_dim)
        self.lock = threading.RLock()
        self.closing = False
        self._pending_writes = 0

    def persist(self) -> None:
        self.graph.save(self.config.graph_path)


class ApiError(Exception):
    def __init__(self, status: int, detail: str):
        self.status = status
        self.detail = detail
        super().__init__(detail)


class QueryIn(BaseModel):
    schema_version: int = SCHEMA_VERSION
    text: str
    embedding: Optional[list[float]] = None
    outcome: str = "unresolved"


class SegmentIn(BaseModel):
    kind: str
    content: str


class TrajectoryIn(BaseModel):
    schema_version: int = SCHEMA_VERSION
    question: str
    segments: list[SegmentIn] = Field(min_length=1)
    reward: float


class FeedbackIn(BaseModel):
    schema_version: int = SCHEMA_VERSION
    query: str
    sampled_meta: str
    r_with: float
    r_wo: float


def create_app(config: ServiceConfig) -> FastAPI:
    store = GraphStore(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        store.closing = True

    app = FastAPI(title="memograph", version="0.1.0", lifespan=lifespan)
    app.state.store = store

    def check_auth(request: Request) -> None:
        if config.auth_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {config.auth_token}":
            raise ApiError(401, "missing or invalid bearer token")

    def begin_write() -> None:
        if config.read_only:
            raise ApiError(403, "graph file is read-only; mutations rejected")
        if store.closing:
            raise ApiError(409, "service is shutting down; write rejected")
        if store._pending_writes >= config.write_queue_depth:
            raise ApiError(503, "write queue full; retry later")

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        headers = {"Retry-After": "1"} if exc.status == 503 else None
        return JSONResponse(
            status_code=exc.status, content={"detail": exc.detail}, headers=headers
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        fields = ", ".join(
            ".".join(str(p) for p in err["loc"] if p != "body") for err in exc.errors()
        )
        return JSONResponse(
            status_code=400,
            content={"detail": f"schema violation in field(s): {fields}"},
        )

    @app.exception_handler(Exception)
    async def _internal_error(request: Request, exc: Exception):
        return JSONResponse(
            status_code=500,
            content={"detail": f"internal error (incident {uuid.uuid4().hex[:12]})"},
        )

    @app.get("/v1/health")
    def health():
        with store.lock:
            return {
                "schema_version": SCHEMA_VERSION,
                "queries": len(store.graph.queries),
                "paths": len(store.graph.paths),
                "metas": len(store.graph.metas),
            }

    @app.post("/v1/queries")
    def add_query(body: QueryIn, _=Depends(check_auth)):
        begin_write()
        store._pending_writes += 1
        try:
            with store.lock:
                embedding = (
                    body.embedding
                    if body.embedding is not None
                    else store.embedder.embed(body.text)
                )
                try:
                    qid = store.graph.add_query(body.text, embedding, body.outcome)
                except GraphError as exc:
                    raise ApiError(400, f"embedding: {exc}")
                store.persist()
                return {"schema_version": SCHEMA_VERSION, "id": qid}
        finally:
            store._pending_writes -= 1

    @app.post("/v1/trajectories")
    def add_trajectory(body: TrajectoryIn, _=Depends(check_auth)):
        begin_write()
        store._pending_writes += 1
        try:
            with store.lock:
                try:
                    segments = [Segment(s.kind, s.content) for s in body.segments]
                except TagError as exc:
                    raise ApiError(400, f"segments: {exc}")
                trajectory = Trajectory(
                    question=body.question,
                    segments=segments,
                    tool_calls_used=sum(
                        1 for s in segments if s.kind == "tool_call"
                    ),
                    reward=body.reward,
                )
                try:
                    report = update_memory_graph(
                        body.question,
                        [trajectory],
                        store.graph,
                        ScriptedAnalyst(),
                        store.embedder,
                    )
                except (GraphError, InductionError) as exc:
                    raise ApiError(400, str(exc))
                store.persist()
                return {
                    "schema_version": SCHEMA_VERSION,
                    "query_id": report.query_id,
                    "path_ids": report.path_ids,
                    "speculative_metas": report.speculative_metas,
                }
        finally:
            store._pending_writes -= 1

    @app.get("/v1/retrieve")
    def retrieve(q: str, k: int = 3, _=Depends(check_auth)):
        if k < 0:
            raise ApiError(400, "k must be >= 0")
        with store.lock:
            ranked = rank_metas(
                q, store.graph, top_n_queries=config.top_n, k=k,
                embedder=store.embedder,
            )
            prompt = augment_prompt(ranked, q, store.graph)
            return {
                "schema_version": SCHEMA_VERSION,
                "metas": [
                    {
                        "id": r.meta,
                        "score": r.score,
                        "rank": r.rank,
                        "summary": store.graph.metas[r.meta].summary,
                    }
                    for r in ranked
                ],
                "prompt": prompt.rendered,
                "template_id": prompt.template_id,
            }

    @app.post("/v1/feedback")
    def feedback(body: FeedbackIn, _=Depends(check_auth)):
        begin_write()
        store._pending_writes += 1
        try:
            with store.lock:
                graph = store.graph
                if body.query not in graph.queries:
                    raise ApiError(404, f"unknown query {body.query!r}")
                if body.sampled_meta not in graph.metas:
                    raise ApiError(404, f"unknown meta {body.sampled_meta!r}")
                embedding = graph.queries[body.query].embedding
                subgraph = activate_subgraph(embedding, graph, config.top_n)
                if body.sampled_meta not in subgraph.metas:
                    raise ApiError(
                        400,
                        f"meta {body.sampled_meta!r} is not reachable from the "
                        f"activated subgraph of {body.query!r}",
                    )
                dist, _, _ = selection_distribution(
                    subgraph, graph, config.temperature, seed=0
                )
                report = compute_gradients(
                    body.sampled_meta, dist, subgraph, graph,
                    body.r_with - body.r_wo,
                )
                for (src, dst, relation), grad in report.gradients.items():
                    edge = graph.edge(src, dst, relation)
                    graph.set_weight(
                        src, dst, relation,
                        edge.weight - config.learning_rate * grad,
                    )
                new_rho = relevance(body.sampled_meta, subgraph, graph)
                store.persist()
                return {
                    "schema_version": SCHEMA_VERSION,
                    "meta": body.sampled_meta,
                    "rho": new_rho,
                    "delta_r": body.r_with - body.r_wo,
                }
        finally:
            store._pending_writes -= 1

    @app.get("/v1/graph/export")
    def export(_=Depends(check_auth)):
        with store.lock:
            # Byte-identical to the CLI export of the same graph state.
            return Response(
                content=store.graph.to_json() + "\n",
                media_type="application/json",
            )

    return app


def serve(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
