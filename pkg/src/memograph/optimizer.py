"""Reward-gap driven edge-weight learning via the score-function gradient.

Each step samples one strategy note for a query, evaluates the agent with and
without that guidance, and nudges every weight on a chain into an activated
note by -lr * d/dw [-gap * log p(sampled)]. Updates are projected back into
the graph's weight bounds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .graph import MemoryGraph, Relation
from .scoring import (
    ActivatedSubgraph,
    SelectionDistribution,
    activate_subgraph,
    selection_distribution,
)


class OptimizerError(Exception):
    pass


@dataclass
class RewardGap:
    with_guidance: float
    without_guidance: float
    delta: float = field(init=False)

    def __post_init__(self) -> None:
        self.delta = self.with_guidance - self.without_guidance


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.1
    temperature: float = 1.0
    top_n: int = 3
    epochs: int = 1
    seed: int = 0
    frozen: bool = False

    def __post_init__(self) -> None:
        # learning_rate 0 is allowed as the no-learning control arm.
        if not 0.0 <= self.learning_rate <= 1.0:
            raise OptimizerError("learning_rate must lie in [0, 1]")
        if self.temperature <= 0:
            raise OptimizerError("temperature must be > 0")
        if self.top_n < 1:
            raise OptimizerError("top_n must be >= 1")
        if self.epochs < 1:
            raise OptimizerError("epochs must be >= 1")


@dataclass
class GradientReport:
    gradients: dict[tuple[str, str, str], float]
    sampled_meta: str
    probability: float
    delta_r: float


@dataclass
class TrainingQuery:
    """A query to learn from: text plus its embedding and gold answer if any."""

    text: str
    embedding: np.ndarray
    query_id: str = ""
    gold: str = ""


@dataclass
class StepReport:
    query_id: str
    skipped: bool
    sampled_meta: Optional[str] = None
    p_sampled: Optional[float] = None
    reward_gap: Optional[RewardGap] = None
    gradient_report: Optional[GradientReport] = None
    distribution: Optional[SelectionDistribution] = None


@dataclass
class StepRecord:
    index: int
    query_id: str
    sampled_meta: Optional[str]
    delta_r: Optional[float]
    p_sampled: Optional[float]
    probs: dict[str, float]
    reward_with: Optional[float]
    weight_hash: str
    wall_time: float
    skipped: bool

    def as_line(self) -> str:
        """Line-delimited trace record: step, query, meta, gap, p, wall-time."""
        meta = self.sampled_meta or "-"
        gap = "" if self.delta_r is None else f"{self.delta_r:.6f}"
        p = "" if self.p_sampled is None else f"{self.p_sampled:.6f}"
        return f"{self.index}\t{self.query_id}\t{meta}\t{gap}\t{p}\t{self.wall_time:.6f}"


@dataclass
class TrainingTrace:
    records: list[StepRecord] = field(default_factory=list)


class TrainingError(OptimizerError):
    """Carries the partial trace accumulated before the failure."""

    def __init__(self, message: str, trace: TrainingTrace):
        super().__init__(message)
        self.trace = trace


def compute_gradients(
    sampled_meta: str,
    distribution: SelectionDistribution,
    subgraph: ActivatedSubgraph,
    graph: MemoryGraph,
    delta_r: float,
) -> GradientReport:
    """Exact loss gradient for every edge on a chain into an activated meta.

    d rho(m)/d w_qt(i,j) = sim_i * w_tm(j,m) when the chain exists;
    d rho(m)/d w_tm(j,m) = sum_i sim_i * w_qt(i,j); the softmax factor
    (indicator - p) and the temperature divide in on top.
    """
    if sampled_meta not in distribution.probs:
        raise OptimizerError(f"sampled meta {sampled_meta!r} not in distribution")
    if set(distribution.probs) != set(subgraph.metas):
        raise OptimizerError("distribution support does not match the subgraph")
    grads: dict[tuple[str, str, str], float] = {}
    inv_t = 1.0 / distribution.temperature
    for qid, sim in subgraph.query_sims.items():
        for tid in graph.paths_of_query(qid):
            w_qt = graph.edge(qid, tid, Relation.QUERY_TO_PATH).weight
            for mid in graph.metas_of_path(tid):
                if mid not in subgraph.metas:
                    continue
                w_tm = graph.edge(tid, mid, Relation.PATH_TO_META).weight
                factor = (1.0 if mid == sampled_meta else 0.0) - distribution.probs[mid]
                coeff = -delta_r * inv_t * factor
                qt_key = (qid, tid, Relation.QUERY_TO_PATH.value)
                tm_key = (tid, mid, Relation.PATH_TO_META.value)
                grads[qt_key] = grads.get(qt_key, 0.0) + coeff * sim * w_tm
                grads[tm_key] = grads.get(tm_key, 0.0) + coeff * sim * w_qt
    return GradientReport(
        gradients=grads,
        sampled_meta=sampled_meta,
        probability=distribution.probs[sampled_meta],
        delta_r=delta_r,
    )


def reinforce_step(
    graph: MemoryGraph,
    query: TrainingQuery,
    agent: Callable,
    reward_fn: Callable,
    config: OptimizerConfig,
    rng: Optional[np.random.Generator] = None,
) -> StepReport:
    """One counterfactual evaluation plus weight update for a single query.

    The agent runs twice (with and without the sampled guidance) before any
    weight moves, so an agent failure leaves the graph untouched.
    """
    if not graph.queries:
        raise OptimizerError("graph has no stored queries to activate")
    subgraph = activate_subgraph(query.embedding, graph, config.top_n)
    if subgraph.empty:
        return StepReport(query_id=query.query_id, skipped=True)
    dist, sampled, p_sampled = selection_distribution(
        subgraph, graph, config.temperature, seed=config.seed, rng=rng
    )
    guided = agent(query, graph.metas[sampled])
    r_with = float(reward_fn(guided, query))
    unguided = agent(query, None)
    r_wo = float(reward_fn(unguided, query))
    gap = RewardGap(with_guidance=r_with, without_guidance=r_wo)
    report = compute_gradients(sampled, dist, subgraph, graph, gap.delta)
    if not config.frozen:
        for (src, dst, relation), grad in report.gradients.items():
            edge = graph.edge(src, dst, relation)
            graph.set_weight(
                src, dst, relation, edge.weight - config.learning_rate * grad
            )
    return StepReport(
        query_id=query.query_id,
        skipped=False,
        sampled_meta=sampled,
        p_sampled=p_sampled,
        reward_gap=gap,
        gradient_report=report,
        distribution=dist,
    )


def optimize_weights(
    graph: MemoryGraph,
    queries: Sequence[TrainingQuery],
    agent: Callable,
    reward_fn: Callable,
    config: OptimizerConfig,
    trace_sink: Optional[Callable[[StepRecord], None]] = None,
) -> TrainingTrace:
    """Run epochs x queries steps in order, mutating the graph in place."""
    if not queries:
        raise OptimizerError("no training queries given")
    rng = np.random.default_rng(config.seed)
    trace = TrainingTrace()
    index = 0
    for _ in range(config.epochs):
        for query in queries:
            started = time.perf_counter()
            try:
                step = reinforce_step(graph, query, agent, reward_fn, config, rng=rng)
            except Exception as exc:
                raise TrainingError(str(exc), trace) from exc
            record = StepRecord(
                index=index,
                query_id=query.query_id,
                sampled_meta=step.sampled_meta,
                delta_r=None if step.reward_gap is None else step.reward_gap.delta,
                p_sampled=step.p_sampled,
                probs=dict(step.distribution.probs) if step.distribution else {},
                reward_with=None
                if step.reward_gap is None
                else step.reward_gap.with_guidance,
                weight_hash=graph.weight_hash(),
                wall_time=time.perf_counter() - started,
                skipped=step.skipped,
            )
            trace.records.append(record)
            if trace_sink is not None:
                trace_sink(record)
            index += 1
    return trace
