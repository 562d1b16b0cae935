"""Distilling strategy notes from contrasting decision paths.

Three routes, chosen by how a query's sampled trajectories split: contrast one
success against one failure, borrow from similar queries when everything
failed, or do nothing when everything succeeded. Proposals then go through a
create/update/skip resolution step that enforces the soft cap of 30 notes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

from . import fsm as fsm_mod
from .graph import (
    ConfidenceLevel,
    MemoryGraph,
    PathOutcome,
    Principle,
    Relation,
    SCORE_MAX,
    SCORE_MIN,
)
from .scoring import similarity

META_SOFT_CAP = 30
MATCH_THRESHOLD = 0.9
SCORE_REINFORCEMENT = 5


class InductionError(Exception):
    pass


@dataclass
class MetaPayload:
    summary: str
    principles: list[dict]
    overall_level: str
    evidence_paths: int
    uncertainty_note: str


@dataclass
class MetaProposal:
    decision: str  # create | update | skip
    target_meta: Optional[str] = None
    reasoning: str = ""
    payload: Optional[MetaPayload] = None
    exceptional: bool = False
    source_paths: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.decision not in ("create", "update", "skip"):
            raise InductionError(f"unknown decision {self.decision!r}")
        if self.decision == "update" and not self.target_meta:
            raise InductionError("update proposal needs a target meta")
        if self.decision == "skip" and self.payload is not None:
            raise InductionError("skip proposal must not carry a payload")
        if self.decision != "skip" and self.payload is None:
            raise InductionError(f"{self.decision} proposal needs a payload")


def first_divergence(a: Sequence[str], b: Sequence[str]) -> Optional[int]:
    """Index of the first position where two state sequences differ, or None."""
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    if len(a) != len(b):
        return min(len(a), len(b))
    return None


class ScriptedAnalyst:
    """Deterministic analyst: names the first diverging decision, no model calls."""

    kind = "scripted"

    def propose(
        self,
        query_text: str,
        success_states: Sequence[str],
        failure_states: Sequence[str],
        graph: MemoryGraph,
    ) -> MetaProposal:
        d = first_divergence(success_states, failure_states)
        if d is None:
            return MetaProposal(
                decision="skip",
                reasoning="success and failure paths are identical; nothing to contrast",
            )
        good = success_states[d] if d < len(success_states) else "terminating"
        bad = failure_states[d] if d < len(failure_states) else "terminating"
        before = success_states[d - 1] if d > 0 else success_states[0]
        summary = (
            f"After {before}, successful runs tend to proceed to {good} while "
            f"failures enter {bad}; steering toward {good} at that decision "
            f"point may help."
        )
        principles = [
            {
                "text": f"After {before}, prefer {good} over {bad}.",
                "level": "high",
                "score": 70,
            },
            {
                "text": f"Entering {bad} tends to precede failure; treat it as a warning sign.",
                "level": "medium",
                "score": 55,
            },
        ]
        return MetaProposal(
            decision="create",
            reasoning=f"paths diverge at position {d} ({good} vs {bad})",
            payload=MetaPayload(
                summary=summary,
                principles=principles,
                overall_level="high",
                evidence_paths=2,
                uncertainty_note=(
                    "Derived from a single success/failure pair; the pattern may "
                    "be specific to this query's knowledge domain."
                ),
            ),
        )


class LlmAnalyst:
    """Prompts a model for the create/update/skip decision and parses its JSON."""

    kind = "llm"

    def __init__(self, transport, prompt_template: Optional[str] = None):
        self.transport = transport
        if prompt_template is None:
            prompt_template = (
                resources.files("memograph.assets")
                .joinpath("meta_analysis.txt")
                .read_text()
            )
        self.prompt_template = prompt_template

    def _render(
        self,
        query_text: str,
        success_states: Sequence[str],
        failure_states: Sequence[str],
        graph: MemoryGraph,
    ) -> str:
        existing = "; ".join(
            f"{m.id}: {m.summary} [{m.overall_level.value}]"
            for m in graph.metas.values()
        )
        return (
            self.prompt_template.replace(
                "{{transitions_info}}", graph.fsm.transitions_info()
            )
            .replace("{{meta_count}}", str(len(graph.metas)))
            .replace("{{existing_metas}}", existing or "(none)")
            .replace("{{query}}", query_text)
            .replace("{{success_path}}", fsm_mod.format_path(success_states))
            .replace("{{failure_path}}", fsm_mod.format_path(failure_states))
        )

    def propose(
        self,
        query_text: str,
        success_states: Sequence[str],
        failure_states: Sequence[str],
        graph: MemoryGraph,
    ) -> MetaProposal:
        from .gateway import chat

        prompt = self._render(query_text, success_states, failure_states, graph)
        messages = [{"role": "user", "content": prompt}]
        reply = chat(messages, self.transport)
        try:
            return parse_analyst_response(reply)
        except InductionError:
            # One retry for an unparseable reply, then surface the error.
            reply = chat(messages, self.transport)
            return parse_analyst_response(reply)


def parse_analyst_response(text: str) -> MetaProposal:
    """Validate a model reply against the analyst output schema."""
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end == -1:
        raise InductionError("analyst reply contains no JSON object")
    try:
        doc = json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise InductionError(f"analyst reply is not valid JSON: {exc.msg}") from None
    decision = doc.get("decision")
    if decision not in ("create", "update", "skip"):
        raise InductionError(f"analyst decision {decision!r} not in create/update/skip")
    if decision == "skip":
        return MetaProposal(decision="skip", reasoning=doc.get("reasoning", ""))
    raw = doc.get("meta_cognition")
    if not isinstance(raw, dict):
        raise InductionError("analyst reply missing meta_cognition object")
    principles = []
    for item in raw.get("strategy_principles", []):
        score = item.get("confidence_score")
        if not isinstance(score, int) or not SCORE_MIN <= score <= SCORE_MAX:
            raise InductionError(
                f"confidence_score {score!r} outside [{SCORE_MIN}, {SCORE_MAX}]"
            )
        level = item.get("confidence")
        if level not in ("low", "medium", "high"):
            raise InductionError(f"confidence level {level!r} invalid")
        principles.append(
            {"text": item.get("principle", ""), "level": level, "score": score}
        )
    if not principles:
        raise InductionError("analyst reply carries no strategy principles")
    overall = raw.get("overall_confidence")
    if overall not in ("low", "medium", "high"):
        raise InductionError(f"overall_confidence {overall!r} invalid")
    evidence = raw.get("evidence_paths")
    if not isinstance(evidence, int) or evidence < 1:
        raise InductionError(f"evidence_paths {evidence!r} must be a positive integer")
    payload = MetaPayload(
        summary=raw.get("summary", ""),
        principles=principles,
        overall_level=overall,
        evidence_paths=evidence,
        uncertainty_note=raw.get("uncertainty_note", ""),
    )
    if not payload.summary:
        raise InductionError("analyst reply has an empty summary")
    return MetaProposal(
        decision=decision,
        target_meta=doc.get("target_meta_id"),
        reasoning=doc.get("reasoning", ""),
        payload=payload,
        exceptional=bool(doc.get("exceptional", False)),
    )


def induce_contrastive(
    query_id: str,
    success_path: str,
    fail_path: str,
    analyst,
    graph: MemoryGraph,
) -> MetaProposal:
    """Contrast one success and one failure path of the same query."""
    attached = set(graph.paths_of_query(query_id))
    if success_path not in attached or fail_path not in attached:
        raise InductionError("both paths must be attached to the query")
    s_node = graph.paths[success_path]
    f_node = graph.paths[fail_path]
    if s_node.outcome is not PathOutcome.SUCCESS or f_node.outcome is not PathOutcome.FAILURE:
        raise InductionError("contrastive induction needs one success and one failure")
    query_text = graph.queries[query_id].text
    proposal = analyst.propose(query_text, s_node.states, f_node.states, graph)
    proposal.source_paths = [success_path, fail_path]
    return proposal


def induce_speculative(query_id: str, graph: MemoryGraph, k: int) -> set[str]:
    """Borrow notes from the top-k similar queries' successful paths.

    Provisional path->meta links are added from this query's failure paths at
    half the usual starting weight; returns the borrowed meta ids.
    """
    if query_id not in graph.queries:
        raise InductionError(f"unknown query {query_id!r}")
    own_paths = graph.paths_of_query(query_id)
    if any(graph.paths[t].outcome is PathOutcome.SUCCESS for t in own_paths):
        raise InductionError("speculative induction applies only to all-failure queries")
    anchor = graph.queries[query_id].embedding
    scored = [
        (qid, similarity(anchor, node.embedding))
        for qid, node in graph.queries.items()
        if qid != query_id
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    borrowed: set[str] = set()
    for qid, _ in scored[:k]:
        for tid in graph.paths_of_query(qid):
            if graph.paths[tid].outcome is PathOutcome.SUCCESS:
                borrowed.update(graph.metas_of_path(tid))
    for tid in own_paths:
        for mid in sorted(borrowed):
            if not graph.has_edge(tid, mid, Relation.PATH_TO_META):
                graph.link_path_to_meta(tid, mid, provisional=True)
    return borrowed


def _nearest_meta(
    graph: MemoryGraph, embedding, prefer_low_confidence: bool = False
) -> Optional[str]:
    candidates = list(graph.metas.values())
    if prefer_low_confidence:
        weak = [
            m
            for m in candidates
            if m.overall_level in (ConfidenceLevel.LOW, ConfidenceLevel.MEDIUM)
        ]
        if weak:
            candidates = weak
    best_sim = float("-inf")
    best_id: Optional[str] = None
    for meta in candidates:
        sim = similarity(embedding, meta.embedding)
        if sim > best_sim or (sim == best_sim and (best_id is None or meta.id < best_id)):
            best_sim, best_id = sim, meta.id
    return best_id


def _reinforce_meta(graph: MemoryGraph, meta_id: str, payload: Optional[MetaPayload]) -> None:
    meta = graph.metas[meta_id]
    meta.evidence_paths += 1
    payload_texts = (
        {p["text"].strip().lower() for p in payload.principles} if payload else set()
    )
    matched = [
        p for p in meta.principles if p.text.strip().lower() in payload_texts
    ]
    # Without a textual match the whole note was matched, so reinforce all of it.
    for principle in matched or meta.principles:
        principle.score = min(SCORE_MAX, principle.score + SCORE_REINFORCEMENT)


def resolve_proposal(
    proposal: MetaProposal,
    graph: MemoryGraph,
    embedder,
    match_threshold: float = MATCH_THRESHOLD,
) -> dict:
    """Apply a proposal to the graph and report what actually happened."""
    if proposal.decision == "skip":
        return {"action": "skip", "meta_id": None}
    if proposal.decision == "update":
        if proposal.target_meta not in graph.metas:
            raise InductionError(f"unknown update target {proposal.target_meta!r}")
        _reinforce_meta(graph, proposal.target_meta, proposal.payload)
        return {"action": "update", "meta_id": proposal.target_meta}
    payload = proposal.payload
    assert payload is not None
    embedding = embedder.embed(payload.summary)
    if graph.metas:
        nearest = _nearest_meta(graph, embedding)
        if nearest is not None:
            sim = similarity(embedding, graph.metas[nearest].embedding)
            if sim >= match_threshold:
                _reinforce_meta(graph, nearest, payload)
                return {"action": "update", "meta_id": nearest, "matched": sim}
    if len(graph.metas) >= META_SOFT_CAP and not proposal.exceptional:
        target = _nearest_meta(graph, embedding, prefer_low_confidence=True)
        if target is not None:
            _reinforce_meta(graph, target, payload)
            return {"action": "update", "meta_id": target, "capped": True}
    meta_id = graph.add_meta(
        summary=payload.summary,
        principles=[Principle(**p) for p in payload.principles],
        overall_level=payload.overall_level,
        evidence_paths=payload.evidence_paths,
        uncertainty_note=payload.uncertainty_note,
        embedding=embedding,
    )
    return {"action": "create", "meta_id": meta_id}


@dataclass
class MutationReport:
    query_id: str
    path_ids: list[str]
    proposals: list[dict]
    speculative_metas: list[str]
    linked_metas: list[str]


def update_memory_graph(
    query_text: str,
    trajectories: Sequence,
    graph: MemoryGraph,
    analyst,
    embedder,
    grounder=None,
    k_similar: int = 3,
    match_threshold: float = MATCH_THRESHOLD,
) -> MutationReport:
    """Ingest one query's sampled trajectories and run the induction policy.

    Adds the query node and one grounded path per trajectory, partitions paths
    by reward, then contrasts, borrows, or stays silent accordingly.
    """
    if not trajectories:
        raise InductionError("at least one trajectory is required")
    if grounder is None:
        grounder = fsm_mod.RuleBasedGrounder()
    query_id = graph.add_query(
        query_text,
        embedder.embed(query_text),
        trajectory_refs=[
            getattr(t, "ref", "") or f"traj-{i}" for i, t in enumerate(trajectories)
        ],
    )
    successes: list[str] = []
    failures: list[str] = []
    path_ids: list[str] = []
    for i, trajectory in enumerate(trajectories):
        states = fsm_mod.ground_trajectory(trajectory, graph.fsm, grounder)
        outcome = (
            PathOutcome.SUCCESS if trajectory.reward == 1 else PathOutcome.FAILURE
        )
        tid = graph.attach_path(
            query_id,
            states,
            outcome,
            source_trajectory=getattr(trajectory, "ref", "") or f"traj-{i}",
        )
        path_ids.append(tid)
        (successes if outcome is PathOutcome.SUCCESS else failures).append(tid)
    proposals: list[dict] = []
    speculative: list[str] = []
    linked: list[str] = []
    if successes and failures:
        proposal = induce_contrastive(
            query_id, min(successes), min(failures), analyst, graph
        )
        outcome = resolve_proposal(proposal, graph, embedder, match_threshold)
        proposals.append(outcome)
        if outcome["meta_id"] is not None:
            for tid in proposal.source_paths:
                if not graph.has_edge(tid, outcome["meta_id"], Relation.PATH_TO_META):
                    graph.link_path_to_meta(tid, outcome["meta_id"])
                    linked.append(outcome["meta_id"])
    elif failures and not successes:
        speculative = sorted(induce_speculative(query_id, graph, k_similar))
    return MutationReport(
        query_id=query_id,
        path_ids=path_ids,
        proposals=proposals,
        speculative_metas=speculative,
        linked_metas=linked,
    )
