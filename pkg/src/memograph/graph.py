"""Layered memory graph: query nodes feed path nodes feed strategy notes.

Edges are directed, weighted and strictly bipartite (query->path, path->meta),
so the whole structure is acyclic by construction. Mutations follow a
single-writer contract; reads may share an unchanging snapshot.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .fsm import FsmSpec, validate_path

FORMAT_VERSION = 1
DEFAULT_WEIGHT_BOUNDS = (0.01, 10.0)
DEFAULT_INITIAL_WEIGHT = 1.0
# Provisional links borrowed from similar queries start at half the prior.
PROVISIONAL_WEIGHT_FACTOR = 0.5

SCORE_MIN = 30
SCORE_MAX = 85

_ID_RE = re.compile(r"^([a-z]+)(\d+)$")


class GraphError(Exception):
    """Violation of a graph precondition or invariant."""


class QueryOutcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    MIXED = "mixed"
    UNRESOLVED = "unresolved"


class PathOutcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


class Relation(str, Enum):
    QUERY_TO_PATH = "query_to_path"
    PATH_TO_META = "path_to_meta"


class ConfidenceLevel(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass
class Principle:
    text: str
    level: ConfidenceLevel
    score: int

    def __post_init__(self) -> None:
        self.level = ConfidenceLevel(self.level)
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise GraphError(f"principle score must be an integer, got {self.score!r}")
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise GraphError(
                f"principle score {self.score} outside [{SCORE_MIN}, {SCORE_MAX}]"
            )


@dataclass
class QueryNode:
    id: str
    text: str
    embedding: np.ndarray
    outcome: QueryOutcome
    trajectory_refs: list[str] = field(default_factory=list)


@dataclass
class PathNode:
    id: str
    states: tuple[str, ...]
    outcome: PathOutcome
    source_trajectory: str = ""


@dataclass
class MetaNode:
    id: str
    summary: str
    principles: list[Principle]
    overall_level: ConfidenceLevel
    evidence_paths: int
    uncertainty_note: str
    embedding: np.ndarray

    def __post_init__(self) -> None:
        self.overall_level = ConfidenceLevel(self.overall_level)
        if self.evidence_paths < 1:
            raise GraphError("evidence_paths must be >= 1")


@dataclass
class Edge:
    src: str
    dst: str
    relation: Relation
    weight: float
    provisional: bool = False

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.relation.value)


def _as_embedding(vector: Sequence[float], dim: int, what: str) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise GraphError(
            f"{what} embedding has dimension {arr.shape}, graph expects ({dim},)"
        )
    return arr


class MemoryGraph:
    """Mutable store for the three node layers and their weighted edges."""

    def __init__(
        self,
        embedding_dim: int,
        fsm: FsmSpec,
        weight_bounds: tuple[float, float] = DEFAULT_WEIGHT_BOUNDS,
        initial_weight: float = DEFAULT_INITIAL_WEIGHT,
    ):
        if embedding_dim < 1:
            raise GraphError("embedding_dim must be >= 1")
        w_min, w_max = weight_bounds
        if not (0 < w_min <= w_max):
            raise GraphError(f"invalid weight bounds ({w_min}, {w_max})")
        if not (w_min <= initial_weight <= w_max):
            raise GraphError("initial weight must lie inside the weight bounds")
        self.embedding_dim = embedding_dim
        self.fsm = fsm
        self.weight_bounds = (float(w_min), float(w_max))
        self.initial_weight = float(initial_weight)
        self.format_version = FORMAT_VERSION
        self.queries: dict[str, QueryNode] = {}
        self.paths: dict[str, PathNode] = {}
        self.metas: dict[str, MetaNode] = {}
        self.edges: dict[tuple[str, str, str], Edge] = {}
        self._counters = {"q": 0, "t": 0, "m": 0}

    # -- id management -------------------------------------------------

    def _fresh_id(self, prefix: str, taken: dict) -> str:
        self._counters[prefix] += 1
        node_id = f"{prefix}{self._counters[prefix]}"
        while node_id in taken:
            self._counters[prefix] += 1
            node_id = f"{prefix}{self._counters[prefix]}"
        return node_id

    def _claim_id(self, node_id: str, prefix: str) -> None:
        m = _ID_RE.match(node_id)
        if m and m.group(1) == prefix:
            self._counters[prefix] = max(self._counters[prefix], int(m.group(2)))

    # -- node operations -----------------------------------------------

    def add_query(
        self,
        text: str,
        embedding: Sequence[float],
        outcome: QueryOutcome | str = QueryOutcome.UNRESOLVED,
        trajectory_refs: Optional[Iterable[str]] = None,
        node_id: Optional[str] = None,
    ) -> str:
        if not text:
            raise GraphError("query text must be non-empty")
        outcome = QueryOutcome(outcome)
        if outcome is QueryOutcome.MIXED:
            raise GraphError("a query cannot start mixed before any paths attach")
        arr = _as_embedding(embedding, self.embedding_dim, "query")
        if node_id is None:
            node_id = self._fresh_id("q", self.queries)
        elif node_id in self.queries:
            raise GraphError(f"duplicate query id {node_id!r}")
        else:
            self._claim_id(node_id, "q")
        self.queries[node_id] = QueryNode(
            id=node_id,
            text=text,
            embedding=arr,
            outcome=outcome,
            trajectory_refs=list(trajectory_refs or []),
        )
        return node_id

    def attach_path(
        self,
        query_id: str,
        states: Sequence[str],
        outcome: PathOutcome | str,
        source_trajectory: str = "",
        node_id: Optional[str] = None,
    ) -> str:
        if query_id not in self.queries:
            raise GraphError(f"unknown query {query_id!r}")
        outcome = PathOutcome(outcome)
        check = validate_path(states, self.fsm)
        if not check.ok:
            raise GraphError(
                f"invalid path at position {check.position}: {check.reason}"
            )
        if node_id is None:
            node_id = self._fresh_id("t", self.paths)
        elif node_id in self.paths:
            raise GraphError(f"duplicate path id {node_id!r}")
        else:
            self._claim_id(node_id, "t")
        self.paths[node_id] = PathNode(
            id=node_id,
            states=tuple(states),
            outcome=outcome,
            source_trajectory=source_trajectory,
        )
        self._insert_edge(
            Edge(query_id, node_id, Relation.QUERY_TO_PATH, self.initial_weight)
        )
        self._refresh_query_outcome(query_id)
        return node_id

    def add_meta(
        self,
        summary: str,
        principles: Sequence[Principle | dict],
        overall_level: ConfidenceLevel | str,
        evidence_paths: int,
        uncertainty_note: str,
        embedding: Sequence[float],
        node_id: Optional[str] = None,
    ) -> str:
        if not summary:
            raise GraphError("meta summary must be non-empty")
        parsed = [p if isinstance(p, Principle) else Principle(**p) for p in principles]
        arr = _as_embedding(embedding, self.embedding_dim, "meta")
        if node_id is None:
            node_id = self._fresh_id("m", self.metas)
        elif node_id in self.metas:
            raise GraphError(f"duplicate meta id {node_id!r}")
        else:
            self._claim_id(node_id, "m")
        self.metas[node_id] = MetaNode(
            id=node_id,
            summary=summary,
            principles=parsed,
            overall_level=ConfidenceLevel(overall_level),
            evidence_paths=evidence_paths,
            uncertainty_note=uncertainty_note,
            embedding=arr,
        )
        return node_id

    def link_path_to_meta(
        self,
        path_id: str,
        meta_id: str,
        weight: Optional[float] = None,
        provisional: bool = False,
    ) -> Edge:
        if path_id not in self.paths:
            raise GraphError(f"unknown path {path_id!r}")
        if meta_id not in self.metas:
            raise GraphError(f"unknown meta {meta_id!r}")
        if weight is None:
            weight = (
                self.initial_weight * PROVISIONAL_WEIGHT_FACTOR
                if provisional
                else self.initial_weight
            )
        w_min, w_max = self.weight_bounds
        if not (w_min <= weight <= w_max):
            raise GraphError(f"weight {weight} outside [{w_min}, {w_max}]")
        edge = Edge(path_id, meta_id, Relation.PATH_TO_META, float(weight), provisional)
        self._insert_edge(edge)
        return edge

    def _insert_edge(self, edge: Edge) -> None:
        if edge.key in self.edges:
            raise GraphError(
                f"duplicate edge {edge.src} -> {edge.dst} ({edge.relation.value})"
            )
        if edge.relation is Relation.QUERY_TO_PATH:
            if edge.src not in self.queries or edge.dst not in self.paths:
                raise GraphError("query_to_path edge endpoints do not match layers")
        else:
            if edge.src not in self.paths or edge.dst not in self.metas:
                raise GraphError("path_to_meta edge endpoints do not match layers")
        self.edges[edge.key] = edge

    def _refresh_query_outcome(self, query_id: str) -> None:
        outcomes = {
            self.paths[tid].outcome for tid in self.paths_of_query(query_id)
        }
        if not outcomes:
            return
        if outcomes == {PathOutcome.SUCCESS}:
            self.queries[query_id].outcome = QueryOutcome.SUCCESS
        elif outcomes == {PathOutcome.FAILURE}:
            self.queries[query_id].outcome = QueryOutcome.FAILURE
        else:
            self.queries[query_id].outcome = QueryOutcome.MIXED

    # -- traversal -----------------------------------------------------

    def paths_of_query(self, query_id: str) -> list[str]:
        return sorted(
            e.dst
            for e in self.edges.values()
            if e.relation is Relation.QUERY_TO_PATH and e.src == query_id
        )

    def metas_of_path(self, path_id: str) -> list[str]:
        return sorted(
            e.dst
            for e in self.edges.values()
            if e.relation is Relation.PATH_TO_META and e.src == path_id
        )

    def edge(self, src: str, dst: str, relation: Relation | str) -> Edge:
        key = (src, dst, Relation(relation).value)
        try:
            return self.edges[key]
        except KeyError:
            raise GraphError(f"no edge {src} -> {dst}") from None

    def has_edge(self, src: str, dst: str, relation: Relation | str) -> bool:
        return (src, dst, Relation(relation).value) in self.edges

    def set_weight(self, src: str, dst: str, relation: Relation | str, weight: float) -> float:
        """Assign a weight, clamped to the graph's bounds; returns the stored value."""
        edge = self.edge(src, dst, relation)
        w_min, w_max = self.weight_bounds
        edge.weight = float(min(max(weight, w_min), w_max))
        return edge.weight

    def weight_hash(self) -> str:
        """Order-independent digest of every edge weight, for drift checks."""
        h = hashlib.sha256()
        for key in sorted(self.edges):
            h.update(repr(key).encode())
            h.update(self.edges[key].weight.hex().encode())
        return h.hexdigest()

    # -- persistence ---------------------------------------------------

    def to_document(self) -> dict:
        return {
            "format_version": self.format_version,
            "embedding_dim": self.embedding_dim,
            "weight_bounds": list(self.weight_bounds),
            "initial_weight": self.initial_weight,
            "fsm": self.fsm.to_document(),
            "nodes": {
                "queries": [
                    {
                        "id": q.id,
                        "text": q.text,
                        "embedding": q.embedding.tolist(),
                        "outcome": q.outcome.value,
                        "trajectory_refs": list(q.trajectory_refs),
                    }
                    for q in self.queries.values()
                ],
                "paths": [
                    {
                        "id": p.id,
                        "states": list(p.states),
                        "outcome": p.outcome.value,
                        "source_trajectory": p.source_trajectory,
                    }
                    for p in self.paths.values()
                ],
                "metas": [
                    {
                        "id": m.id,
                        "summary": m.summary,
                        "principles": [
                            {"text": p.text, "level": p.level.value, "score": p.score}
                            for p in m.principles
                        ],
                        "overall_level": m.overall_level.value,
                        "evidence_paths": m.evidence_paths,
                        "uncertainty_note": m.uncertainty_note,
                        "embedding": m.embedding.tolist(),
                    }
                    for m in self.metas.values()
                ],
            },
            "edges": [
                {
                    "src": e.src,
                    "dst": e.dst,
                    "relation": e.relation.value,
                    "weight": e.weight,
                    "provisional": e.provisional,
                }
                for e in self.edges.values()
            ],
        }

    def to_json(self) -> str:
        # json round-trips float64 exactly (shortest-repr serialization), so
        # weights and embeddings survive save/load bit for bit.
        return json.dumps(self.to_document(), indent=2)

    @classmethod
    def from_document(cls, doc: dict) -> "MemoryGraph":
        if not isinstance(doc, dict):
            raise GraphError("graph document must be a JSON object")
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise GraphError(
                f"unsupported format_version {version!r}, expected {FORMAT_VERSION}"
            )
        fsm = FsmSpec.from_document(doc["fsm"])
        bounds = tuple(doc.get("weight_bounds", DEFAULT_WEIGHT_BOUNDS))
        graph = cls(
            embedding_dim=doc["embedding_dim"],
            fsm=fsm,
            weight_bounds=bounds,  # type: ignore[arg-type]
            initial_weight=doc.get("initial_weight", DEFAULT_INITIAL_WEIGHT),
        )
        nodes = doc.get("nodes", {})
        # Nodes are restored directly: add_query would reject stored "mixed"
        # outcomes whose paths only arrive later in the document.
        for q in nodes.get("queries", []):
            node_id = q["id"]
            if node_id in graph.queries:
                raise GraphError(f"duplicate query id {node_id!r}")
            if not q["text"]:
                raise GraphError(f"query {node_id!r} has empty text")
            graph._claim_id(node_id, "q")
            graph.queries[node_id] = QueryNode(
                id=node_id,
                text=q["text"],
                embedding=_as_embedding(q["embedding"], graph.embedding_dim, "query"),
                outcome=QueryOutcome(q.get("outcome", "unresolved")),
                trajectory_refs=list(q.get("trajectory_refs", [])),
            )
        # Paths are restored directly: attach_path would re-create q->t edges
        # that the document lists explicitly.
        for p in nodes.get("paths", []):
            check = validate_path(p["states"], fsm)
            if not check.ok:
                raise GraphError(
                    f"path {p['id']!r} invalid at position {check.position}: {check.reason}"
                )
            node_id = p["id"]
            if node_id in graph.paths:
                raise GraphError(f"duplicate path id {node_id!r}")
            graph._claim_id(node_id, "t")
            graph.paths[node_id] = PathNode(
                id=node_id,
                states=tuple(p["states"]),
                outcome=PathOutcome(p["outcome"]),
                source_trajectory=p.get("source_trajectory", ""),
            )
        for m in nodes.get("metas", []):
            graph.add_meta(
                m["summary"],
                m["principles"],
                m["overall_level"],
                m["evidence_paths"],
                m.get("uncertainty_note", ""),
                m["embedding"],
                node_id=m["id"],
            )
        w_min, w_max = graph.weight_bounds
        for e in doc.get("edges", []):
            weight = float(e["weight"])
            if not (w_min <= weight <= w_max):
                raise GraphError(f"edge weight {weight} outside [{w_min}, {w_max}]")
            graph._insert_edge(
                Edge(
                    e["src"],
                    e["dst"],
                    Relation(e["relation"]),
                    weight,
                    bool(e.get("provisional", False)),
                )
            )
        for tid in graph.paths:
            if not any(
                e.relation is Relation.QUERY_TO_PATH and e.dst == tid
                for e in graph.edges.values()
            ):
                raise GraphError(f"path {tid!r} has no incoming query edge")
        return graph

    @classmethod
    def from_json(cls, text: str) -> "MemoryGraph":
        return cls.from_document(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MemoryGraph":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def clone(self) -> "MemoryGraph":
        return MemoryGraph.from_document(self.to_document())


def export_graph(graph: MemoryGraph) -> dict:
    """Stable JSON-ready document for the graph."""
    return graph.to_document()


def import_graph(doc: dict) -> MemoryGraph:
    """Validate a document and rebuild the graph; rejects, never repairs."""
    return MemoryGraph.from_document(doc)
