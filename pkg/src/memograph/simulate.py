"""Deterministic synthetic environment for exercising the weight learner.

The environment knows each strategy note's true utility: guidance by note m
pays base + utility(m) (+ optional Gaussian noise), no guidance pays base.
That makes the learning dynamics falsifiable at desk scale without any model
or network in the loop.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fsm import default_fsm
from .graph import MemoryGraph, PathOutcome
from .optimizer import (
    OptimizerConfig,
    TrainingQuery,
    TrainingTrace,
    optimize_weights,
)
from .retrieval import rank_metas

BASE_REWARD = 0.0
DISTRACTOR_PENALTY = 0.05
DEFAULT_NOISE_STD = 0.25

SUCCESS_STATES = (
    "Start",
    "CorrectGoalEstablished",
    "KnowledgeUncertainGap",
    "StrategyPlanning",
    "ToolExecution",
    "InformationAnalysis",
    "DecisionMaking",
    "AnswerGeneration",
    "CorrectAnswer",
    "End",
)


class SimulationError(Exception):
    pass


@dataclass
class SyntheticWorld:
    graph: MemoryGraph
    true_utility: dict[str, float]
    queries: list[TrainingQuery]
    seed: int
    noise_std: float = 0.0

    @property
    def best_meta(self) -> str:
        top = max(self.true_utility.values())
        return min(m for m, u in self.true_utility.items() if u == top)


@dataclass
class ExperimentResult:
    steps: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["step", "p_best", "reward", "arm"])
        for row in self.steps:
            writer.writerow([row["step"], row["p_best"], row["reward"], row["arm"]])
        return out.getvalue()


def build_synthetic_world(
    n_queries: int,
    n_paths: int,
    n_metas: int,
    utility_spec: dict[str, float],
    seed: int,
    embedding_dim: int = 8,
    noise_std: float = 0.0,
) -> SyntheticWorld:
    """Seeded random bipartite wiring with a designated best strategy note."""
    if min(n_queries, n_paths, n_metas) < 1:
        raise SimulationError("world needs at least one node per layer")
    expected_ids = [f"m{i + 1}" for i in range(n_metas)]
    missing = [m for m in expected_ids if m not in utility_spec]
    if missing:
        raise SimulationError(f"utility_spec missing utilities for {missing}")
    rng = np.random.default_rng(seed)
    graph = MemoryGraph(embedding_dim=embedding_dim, fsm=default_fsm())
    queries: list[TrainingQuery] = []
    for i in range(n_queries):
        vec = rng.normal(size=embedding_dim)
        vec /= np.linalg.norm(vec)
        qid = graph.add_query(f"synthetic query {i + 1}", vec)
        queries.append(
            TrainingQuery(text=f"synthetic query {i + 1}", embedding=vec, query_id=qid)
        )
    for m in range(n_metas):
        graph.add_meta(
            summary=f"synthetic strategy {m + 1}",
            principles=[
                {"text": f"principle of strategy {m + 1}", "level": "medium", "score": 60}
            ],
            overall_level="medium",
            evidence_paths=1,
            uncertainty_note="synthetic",
            embedding=rng.normal(size=embedding_dim),
        )
    # Paths: spread over queries and metas so every node sits on some chain.
    path_ids = []
    for j in range(n_paths):
        qid = f"q{(j % n_queries) + 1}" if j < n_queries else f"q{rng.integers(1, n_queries + 1)}"
        tid = graph.attach_path(qid, list(SUCCESS_STATES), PathOutcome.SUCCESS)
        path_ids.append(tid)
    for j, tid in enumerate(path_ids):
        mid = f"m{(j % n_metas) + 1}" if j < n_metas else f"m{rng.integers(1, n_metas + 1)}"
        graph.link_path_to_meta(tid, mid)
    return SyntheticWorld(
        graph=graph,
        true_utility={m: float(utility_spec[m]) for m in expected_ids},
        queries=queries,
        seed=seed,
        noise_std=noise_std,
    )


@dataclass
class _SyntheticResponse:
    meta_id: Optional[str]


def make_oracle(world: SyntheticWorld, noise_seed: Optional[int] = None):
    """Agent and reward function realizing the world's true utilities."""
    noise_rng = np.random.default_rng(world.seed if noise_seed is None else noise_seed)

    def agent(query: TrainingQuery, guidance) -> _SyntheticResponse:
        return _SyntheticResponse(meta_id=None if guidance is None else guidance.id)

    def reward_fn(response: _SyntheticResponse, query: TrainingQuery) -> float:
        if response.meta_id is None:
            return BASE_REWARD
        noise = (
            noise_rng.normal(0.0, world.noise_std) if world.noise_std > 0 else 0.0
        )
        return BASE_REWARD + world.true_utility[response.meta_id] + noise

    return agent, reward_fn


def _steps_from_trace(trace: TrainingTrace, world: SyntheticWorld, arm: str) -> list[dict]:
    rows = []
    for record in trace.records:
        rows.append(
            {
                "step": record.index,
                "p_best": record.probs.get(world.best_meta, 0.0),
                "reward": record.reward_with if record.reward_with is not None else 0.0,
                "arm": arm,
            }
        )
    return rows


def run_convergence(world: SyntheticWorld, config: OptimizerConfig) -> ExperimentResult:
    """Train on the world's query pool and track p(best note) per step."""
    agent, reward_fn = make_oracle(world)
    trace = optimize_weights(world.graph, world.queries, agent, reward_fn, config)
    steps = _steps_from_trace(trace, world, arm="frozen" if config.frozen else "trained")
    result = ExperimentResult(steps=steps)
    rewards = [s["reward"] for s in steps]
    result.summary = {
        "scenario": "convergence",
        "final_p_best": steps[-1]["p_best"] if steps else 0.0,
        "mean_reward": float(np.mean(rewards)) if rewards else 0.0,
        "steps": len(steps),
        "best_meta": world.best_meta,
        "weight_hash": world.graph.weight_hash(),
    }
    return result


def run_frozen_vs_trained(
    world_factory, config: OptimizerConfig
) -> ExperimentResult:
    """Paired runs from identical worlds: learning on vs weights pinned."""
    frozen_cfg = OptimizerConfig(
        learning_rate=config.learning_rate,
        temperature=config.temperature,
        top_n=config.top_n,
        epochs=config.epochs,
        seed=config.seed,
        frozen=True,
    )
    trained_world: SyntheticWorld = world_factory()
    frozen_world: SyntheticWorld = world_factory()
    trained = run_convergence(trained_world, config)
    frozen = run_convergence(frozen_world, frozen_cfg)
    result = ExperimentResult(steps=trained.steps + frozen.steps)
    result.summary = {
        "scenario": "frozen_vs_trained",
        "trained_mean_reward": trained.summary["mean_reward"],
        "frozen_mean_reward": frozen.summary["mean_reward"],
        "trained_final_p_best": trained.summary["final_p_best"],
        "frozen_final_p_best": frozen.summary["final_p_best"],
        "frozen_weight_hash": frozen.summary["weight_hash"],
    }
    return result


def run_ablations(
    world: SyntheticWorld, ks: Sequence[int], config: OptimizerConfig
) -> ExperimentResult:
    """Top-k sweep over a trained world's retrieval with distractor penalties."""
    if not ks:
        raise SimulationError("ks must be non-empty")
    trained = run_convergence(world, config)
    per_k: dict[int, float] = {}
    for k in ks:
        rewards = []
        for query in world.queries:
            if k == 0:
                rewards.append(BASE_REWARD)
                continue
            ranked = rank_metas(query.text, world.graph, top_n_queries=config.top_n, k=k)
            ids = [r.meta for r in ranked]
            reward = BASE_REWARD
            if world.best_meta in ids:
                reward += world.true_utility[world.best_meta]
            reward -= DISTRACTOR_PENALTY * sum(1 for m in ids if m != world.best_meta)
            rewards.append(reward)
        per_k[k] = float(np.mean(rewards))
    steps = trained.steps + [
        {"step": k, "p_best": "", "reward": per_k[k], "arm": f"k={k}"} for k in sorted(per_k)
    ]
    result = ExperimentResult(steps=steps)
    result.summary = {
        "scenario": "ksweep",
        "per_k": {str(k): per_k[k] for k in sorted(per_k)},
        "trained_final_p_best": trained.summary["final_p_best"],
    }
    return result


def default_world_factory(seed: int, noise_std: float = 0.0):
    """Two-note world with utilities +1 / -1; the standard learning testbed."""

    def factory() -> SyntheticWorld:
        return build_synthetic_world(
            n_queries=1,
            n_paths=2,
            n_metas=2,
            utility_spec={"m1": 1.0, "m2": -1.0},
            seed=seed,
            noise_std=noise_std,
        )

    return factory
