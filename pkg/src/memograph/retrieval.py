"""Top-k strategy retrieval and prompt augmentation for new questions."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Optional

from .graph import MemoryGraph
from .scoring import HashedEmbedder, activate_subgraph, relevance

GUIDANCE_HEADER = "Strategic guidance from past experience:"
DEFAULT_TEMPLATE_ID = "guidance-v1"


@dataclass
class RankedMeta:
    meta: str
    score: float
    rank: int


@dataclass
class AugmentedPrompt:
    guidance_block: str
    question: str
    rendered: str
    template_id: str = DEFAULT_TEMPLATE_ID


def rank_metas(
    q_new_text: str,
    graph: MemoryGraph,
    top_n_queries: int = 3,
    k: int = 3,
    embedder=None,
) -> list[RankedMeta]:
    """Rank activated metas by relevance; ties fall back to ascending id."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0 or not graph.queries:
        return []
    if embedder is None:
        embedder = HashedEmbedder(graph.embedding_dim)
    subgraph = activate_subgraph(embedder.embed(q_new_text), graph, top_n_queries)
    if subgraph.empty:
        return []
    scored = [(m, relevance(m, subgraph, graph)) for m in sorted(subgraph.metas)]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return [
        RankedMeta(meta=mid, score=score, rank=i + 1)
        for i, (mid, score) in enumerate(scored[:k])
    ]


def load_template(path=None) -> str:
    # Trailing newlines are dropped so the question stays the exact suffix.
    if path is None:
        text = (
            resources.files("memograph.assets")
            .joinpath("guidance_template.txt")
            .read_text()
        )
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return text.rstrip("\n")


def augment_prompt(
    ranked: list[RankedMeta],
    question: str,
    graph: MemoryGraph,
    template: Optional[str] = None,
    template_id: str = DEFAULT_TEMPLATE_ID,
) -> AugmentedPrompt:
    """Prepend the ranked guidance to the question; no metas means no change."""
    if not ranked:
        return AugmentedPrompt(
            guidance_block="", question=question, rendered=question,
            template_id=template_id,
        )
    if template is None:
        template = load_template()
    lines = [GUIDANCE_HEADER]
    for item in ranked:
        meta = graph.metas[item.meta]
        lines.append(f"{item.rank}. {meta.summary}")
        for principle in meta.principles:
            lines.append(f"   - {principle.text}")
    guidance = "\n".join(lines)
    rendered = template.replace("{{guidance}}", guidance).replace(
        "{{question}}", question
    )
    if not rendered.endswith(question):
        # The question must survive verbatim as the suffix of the prompt.
        rendered = rendered.rstrip("\n") + "\n\n" + question
    return AugmentedPrompt(
        guidance_block=guidance,
        question=question,
        rendered=rendered,
        template_id=template_id,
    )
