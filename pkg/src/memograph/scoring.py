"""Similarity, subgraph activation, relevance scores, and the selection softmax.

Relevance of a strategy note for a fresh query sums, over every activated
query -> path -> meta chain, the product of query similarity and the two edge
weights. All functions are pure reads against a graph snapshot.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import MemoryGraph, Relation

# Sampling uses numpy's PCG64 so seeded draws reproduce across platforms.


class ScoringError(Exception):
    pass


class HashedEmbedder:
    """Deterministic signed bag-of-tokens embedding, no network required.

    Tokens are whitespace-split, hashed (sha1) into a bucket and a sign, and
    the resulting vector is L2-normalized. Equal texts embed equally on any
    platform.
    """

    kind = "hashed_deterministic"

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ScoringError("embedding dimension must be >= 1")
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        tokens = text.split()
        for token in tokens:
            digest = hashlib.sha1(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dimension
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        elif tokens:
            # Signed buckets cancelled exactly; fall back to a unit vector
            # derived from the whole text so non-empty text never embeds to 0.
            digest = hashlib.sha1(text.encode("utf-8")).digest()
            vec[int.from_bytes(digest[:4], "big") % self.dimension] = 1.0
        return vec


class ExternalEmbedder:
    """Adapter for an external embedding callable (e.g. a hosted model)."""

    kind = "external"

    def __init__(self, dimension: int, fn):
        self.dimension = dimension
        self._fn = fn

    def embed(self, text: str) -> np.ndarray:
        vec = np.asarray(self._fn(text), dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise ScoringError(
                f"external embedder returned shape {vec.shape}, expected ({self.dimension},)"
            )
        return vec


def similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity in [-1, 1]."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ScoringError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ScoringError("cosine similarity undefined for a zero vector")
    value = float(np.dot(va, vb) / (na * nb))
    return max(-1.0, min(1.0, value))


@dataclass
class ActivatedSubgraph:
    query_sims: dict[str, float] = field(default_factory=dict)
    paths: set[str] = field(default_factory=set)
    metas: set[str] = field(default_factory=set)

    @property
    def empty(self) -> bool:
        return not self.metas


def activate_subgraph(
    q_new_embedding: Sequence[float], graph: MemoryGraph, top_n: int
) -> ActivatedSubgraph:
    """Top-n most similar stored queries plus their downstream paths and metas.

    Ties are broken by ascending query id so activation is deterministic.
    """
    if top_n < 1:
        raise ScoringError("top_n must be >= 1")
    sub = ActivatedSubgraph()
    if not graph.queries:
        return sub
    scored = [
        (qid, similarity(q_new_embedding, node.embedding))
        for qid, node in graph.queries.items()
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    for qid, sim in scored[:top_n]:
        sub.query_sims[qid] = sim
        for tid in graph.paths_of_query(qid):
            sub.paths.add(tid)
            sub.metas.update(graph.metas_of_path(tid))
    return sub


def relevance(meta_id: str, subgraph: ActivatedSubgraph, graph: MemoryGraph) -> float:
    """Aggregate chain strength into one meta from all activated queries.

    The subgraph carries the new query's similarity to each activated query,
    so the score is sum(sim * w_qt * w_tm) over chains reaching the meta.
    """
    if meta_id not in subgraph.metas:
        raise ScoringError(f"meta {meta_id!r} not in the activated subgraph")
    total = 0.0
    for qid, sim in subgraph.query_sims.items():
        for tid in graph.paths_of_query(qid):
            if graph.has_edge(tid, meta_id, Relation.PATH_TO_META):
                w_qt = graph.edge(qid, tid, Relation.QUERY_TO_PATH).weight
                w_tm = graph.edge(tid, meta_id, Relation.PATH_TO_META).weight
                total += sim * w_qt * w_tm
    return total


@dataclass
class SelectionDistribution:
    scores: dict[str, float]
    probs: dict[str, float]
    temperature: float

    def argmax(self) -> str:
        return min(self.probs, key=lambda m: (-self.probs[m], m))


def softmax(scores: dict[str, float], temperature: float = 1.0) -> dict[str, float]:
    """Max-stabilized softmax over a score map; keys keep their order."""
    if temperature <= 0:
        raise ScoringError("temperature must be > 0")
    if not scores:
        raise ScoringError("softmax over an empty score map")
    keys = list(scores)
    values = np.array([scores[k] for k in keys], dtype=np.float64) / temperature
    values -= values.max()
    exps = np.exp(values)
    probs = exps / exps.sum()
    return dict(zip(keys, probs.tolist()))


def selection_distribution(
    subgraph: ActivatedSubgraph,
    graph: MemoryGraph,
    temperature: float = 1.0,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[SelectionDistribution, str, float]:
    """Softmax over activated metas plus one sampled meta and its probability."""
    if subgraph.empty:
        raise ScoringError("no activated metas: no guidance available")
    metas = sorted(subgraph.metas)
    scores = {m: relevance(m, subgraph, graph) for m in metas}
    probs = softmax(scores, temperature)
    dist = SelectionDistribution(scores=scores, probs=probs, temperature=temperature)
    if rng is None:
        rng = np.random.default_rng(seed)
    sampled = metas[rng.choice(len(metas), p=[probs[m] for m in metas])]
    return dist, sampled, probs[sampled]


def propagate(
    h_q: np.ndarray, graph: MemoryGraph, activation: str = "identity"
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted feature flow through both layers: returns (H_T, H_M).

    Row order follows sorted node ids; with identity activation and query
    similarities as 1-d features, H_M reproduces the relevance scores.
    """
    if activation not in ("identity", "relu"):
        raise ScoringError(f"unknown activation {activation!r}")
    q_ids = sorted(graph.queries)
    t_ids = sorted(graph.paths)
    m_ids = sorted(graph.metas)
    h_q = np.atleast_2d(np.asarray(h_q, dtype=np.float64))
    if h_q.shape[0] != len(q_ids):
        raise ScoringError(
            f"H_Q has {h_q.shape[0]} rows, graph has {len(q_ids)} queries"
        )
    qt = np.zeros((len(q_ids), len(t_ids)))
    tm = np.zeros((len(t_ids), len(m_ids)))
    q_index = {q: i for i, q in enumerate(q_ids)}
    t_index = {t: i for i, t in enumerate(t_ids)}
    m_index = {m: i for i, m in enumerate(m_ids)}
    for edge in graph.edges.values():
        if edge.relation is Relation.QUERY_TO_PATH:
            qt[q_index[edge.src], t_index[edge.dst]] = edge.weight
        else:
            tm[t_index[edge.src], m_index[edge.dst]] = edge.weight
    act = (lambda x: x) if activation == "identity" else (lambda x: np.maximum(x, 0.0))
    h_t = act(qt.T @ h_q)
    h_m = act(tm.T @ h_t)
    return h_t, h_m
