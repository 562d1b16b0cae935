import math

import numpy as np
import pytest

from memograph.graph import MemoryGraph
from memograph.optimizer import (
    OptimizerConfig,
    OptimizerError,
    RewardGap,
    TrainingError,
    TrainingQuery,
    compute_gradients,
    optimize_weights,
    reinforce_step,
)
from memograph.scoring import activate_subgraph, relevance, selection_distribution, softmax

from conftest import MINIMAL_SUCCESS, random_graph


def two_chain_graph(fsm):
    """Two disjoint chains q1->t1->m1 and q1->t2->m2, all weights 1, sim 1."""
    g = MemoryGraph(embedding_dim=2, fsm=fsm)
    qid = g.add_query("anchor", np.array([1.0, 0.0]))
    for _ in range(2):
        tid = g.attach_path(qid, MINIMAL_SUCCESS, "success")
        mid = g.add_meta(
            f"note {tid}", [{"text": "p", "level": "low", "score": 40}],
            "low", 1, "", np.array([0.0, 1.0]),
        )
        g.link_path_to_meta(tid, mid)
    return g, qid


def loss_at(graph, sub, sampled, temperature, delta_r) -> float:
    scores = {m: relevance(m, sub, graph) for m in sorted(sub.metas)}
    probs = softmax(scores, temperature)
    return -delta_r * math.log(probs[sampled])


def finite_difference(graph, sub, sampled, temperature, delta_r, key, h=1e-6):
    edge = graph.edges[key]
    original = edge.weight
    edge.weight = original + h
    up = loss_at(graph, sub, sampled, temperature, delta_r)
    edge.weight = original - h
    down = loss_at(graph, sub, sampled, temperature, delta_r)
    edge.weight = original
    return (up - down) / (2 * h)


def test_hand_worked_two_chain_gradients(fsm):
    g, qid = two_chain_graph(fsm)
    sub = activate_subgraph(np.array([1.0, 0.0]), g, 1)
    dist, _, _ = selection_distribution(sub, g, seed=0)
    assert dist.probs["m1"] == pytest.approx(0.5)
    report = compute_gradients("m1", dist, sub, g, delta_r=1.0)
    assert report.gradients[("t1", "m1", "path_to_meta")] == pytest.approx(-0.5)
    assert report.gradients[("t2", "m2", "path_to_meta")] == pytest.approx(+0.5)
    assert report.gradients[("q1", "t1", "query_to_path")] == pytest.approx(-0.5)
    assert report.gradients[("q1", "t2", "query_to_path")] == pytest.approx(+0.5)


def test_degenerate_singleton_softmax_zero_gradients(fsm):
    g = MemoryGraph(embedding_dim=2, fsm=fsm)
    qid = g.add_query("anchor", np.array([1.0, 0.0]))
    tid = g.attach_path(qid, MINIMAL_SUCCESS, "success")
    mid = g.add_meta("only", [{"text": "p", "level": "low", "score": 40}], "low", 1,
                     "", np.array([0.0, 1.0]))
    g.link_path_to_meta(tid, mid)
    sub = activate_subgraph(np.array([1.0, 0.0]), g, 1)
    dist, sampled, p = selection_distribution(sub, g, seed=0)
    assert p == pytest.approx(1.0)
    report = compute_gradients(sampled, dist, sub, g, delta_r=1.0)
    assert all(v == pytest.approx(0.0) for v in report.gradients.values())


def test_zero_gap_zero_gradients(fsm):
    g, _ = two_chain_graph(fsm)
    sub = activate_subgraph(np.array([1.0, 0.0]), g, 1)
    dist, sampled, _ = selection_distribution(sub, g, seed=0)
    report = compute_gradients(sampled, dist, sub, g, delta_r=0.0)
    assert all(v == 0.0 for v in report.gradients.values())


@pytest.mark.parametrize("temperature", [1.0, 0.5, 2.0])
def test_gradients_match_finite_differences(temperature):
    rng = np.random.default_rng(42)
    checked = 0
    for seed in range(25):
        g = random_graph(seed)
        anchor = rng.normal(size=g.embedding_dim)
        sub = activate_subgraph(anchor, g, 3)
        if sub.empty:
            continue
        dist, sampled, _ = selection_distribution(sub, g, temperature, seed=seed)
        delta_r = float(rng.uniform(0.2, 2.0)) * (1 if rng.random() < 0.5 else -1)
        report = compute_gradients(sampled, dist, sub, g, delta_r)
        for key, grad in report.gradients.items():
            fd = finite_difference(g, sub, sampled, temperature, delta_r, key)
            # Denominator floor 1e-3: below that scale the h=1e-6 central
            # difference's rounding noise (~5e-11) dominates a pure ratio.
            denom = max(abs(grad), abs(fd), 1e-3)
            assert abs(grad - fd) / denom <= 1e-5
            checked += 1
    assert checked > 50


def test_gradient_support_lies_on_chains():
    g = random_graph(17)
    rng = np.random.default_rng(1)
    sub = activate_subgraph(rng.normal(size=g.embedding_dim), g, 2)
    if sub.empty:
        pytest.skip("empty activation for this seed")
    dist, sampled, _ = selection_distribution(sub, g, seed=0)
    report = compute_gradients(sampled, dist, sub, g, 1.0)
    for (src, dst, relation) in report.gradients:
        if relation == "query_to_path":
            assert src in sub.query_sims
            assert set(g.metas_of_path(dst)) & sub.metas
        else:
            assert dst in sub.metas


def test_reward_gap_delta_exact():
    gap = RewardGap(with_guidance=0.75, without_guidance=0.5)
    assert gap.delta == 0.75 - 0.5


def test_config_validation():
    with pytest.raises(OptimizerError):
        OptimizerConfig(learning_rate=1.5)
    with pytest.raises(OptimizerError):
        OptimizerConfig(epochs=0)
    with pytest.raises(OptimizerError):
        OptimizerConfig(temperature=0.0)
    OptimizerConfig(learning_rate=0.0)  # the no-learning control is allowed


def constant_agent(r_with: float, r_wo: float):
    def agent(query, guidance):
        return ("with", r_with) if guidance is not None else ("wo", r_wo)

    def reward_fn(response, query):
        return response[1]

    return agent, reward_fn


def test_reinforce_step_moves_sampled_chain_up(fsm):
    g, qid = two_chain_graph(fsm)
    agent, reward_fn = constant_agent(1.0, 0.0)
    config = OptimizerConfig(learning_rate=0.1, seed=0)
    query = TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid)
    step = reinforce_step(g, query, agent, reward_fn, config)
    assert not step.skipped
    sampled = step.sampled_meta
    tid = "t1" if sampled == "m1" else "t2"
    # gradient -0.5 at lr 0.1 lifts both chain weights by 0.05
    assert g.edge(tid, sampled, "path_to_meta").weight == pytest.approx(1.05)
    assert g.edge(qid, tid, "query_to_path").weight == pytest.approx(1.05)


def test_reinforce_step_equal_rewards_leave_weights(fsm):
    g, qid = two_chain_graph(fsm)
    before = g.weight_hash()
    agent, reward_fn = constant_agent(0.7, 0.7)
    query = TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid)
    reinforce_step(g, query, agent, reward_fn, OptimizerConfig(seed=1))
    assert g.weight_hash() == before


def test_reinforce_step_skips_without_metas(fsm):
    g = MemoryGraph(embedding_dim=2, fsm=fsm)
    qid = g.add_query("anchor", np.array([1.0, 0.0]))
    g.attach_path(qid, MINIMAL_SUCCESS, "success")
    before = g.to_json()
    calls = []

    def agent(query, guidance):
        calls.append(guidance)
        return 0.0

    step = reinforce_step(
        g, TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid),
        agent, lambda r, q: 0.0, OptimizerConfig(seed=0),
    )
    assert step.skipped
    assert calls == []  # neither arm runs when there is no guidance to test
    assert g.to_json() == before


def test_agent_failure_leaves_graph_untouched(fsm):
    g, qid = two_chain_graph(fsm)
    before = g.weight_hash()

    def failing_agent(query, guidance):
        if guidance is None:
            raise RuntimeError("unguided arm crashed")
        return 1.0

    query = TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid)
    with pytest.raises(RuntimeError):
        reinforce_step(g, query, failing_agent, lambda r, q: r, OptimizerConfig(seed=0))
    assert g.weight_hash() == before


def test_one_step_monotonicity_in_gap_sign(fsm):
    for delta, direction in ((1.0, 1), (-1.0, -1)):
        g, qid = two_chain_graph(fsm)
        sub = activate_subgraph(np.array([1.0, 0.0]), g, 1)
        dist, sampled, p_before = selection_distribution(sub, g, seed=3)
        rho_before = relevance(sampled, sub, g)
        agent, reward_fn = constant_agent(delta if delta > 0 else 0.0,
                                          0.0 if delta > 0 else -delta)
        query = TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid)
        config = OptimizerConfig(learning_rate=0.05, seed=3)
        step = reinforce_step(g, query, agent, reward_fn, config)
        assert step.sampled_meta == sampled
        sub_after = activate_subgraph(np.array([1.0, 0.0]), g, 1)
        rho_after = relevance(sampled, sub_after, g)
        dist_after, _, _ = selection_distribution(sub_after, g, seed=3)
        if direction > 0:
            assert rho_after > rho_before
            assert dist_after.probs[sampled] > p_before
        else:
            assert rho_after < rho_before
            assert dist_after.probs[sampled] < p_before


def test_weights_never_exit_bounds(fsm):
    g, qid = two_chain_graph(fsm)
    agent, reward_fn = constant_agent(5.0, 0.0)
    config = OptimizerConfig(learning_rate=1.0, epochs=300, seed=0)
    query = TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid)
    optimize_weights(g, [query], agent, reward_fn, config)
    w_min, w_max = g.weight_bounds
    assert all(w_min <= e.weight <= w_max for e in g.edges.values())


def test_trace_shape_and_frozen_hash(fsm):
    g, qid = two_chain_graph(fsm)
    agent, reward_fn = constant_agent(1.0, 0.0)
    query = TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid)
    trace = optimize_weights(g, [query], agent, reward_fn,
                             OptimizerConfig(epochs=1, seed=0))
    assert len(trace.records) == 1

    g2, qid2 = two_chain_graph(fsm)
    before = g2.weight_hash()
    frozen_trace = optimize_weights(
        g2, [TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid2)],
        agent, reward_fn, OptimizerConfig(epochs=50, seed=0, frozen=True),
    )
    assert len(frozen_trace.records) == 50
    assert {r.weight_hash for r in frozen_trace.records} == {before}


def test_training_error_carries_partial_trace(fsm):
    g, qid = two_chain_graph(fsm)
    state = {"count": 0}

    def flaky_agent(query, guidance):
        state["count"] += 1
        if state["count"] > 4:  # two agent calls per step: fails in step 3
            raise RuntimeError("boom")
        return 1.0 if guidance is not None else 0.0

    query = TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid)
    with pytest.raises(TrainingError) as err:
        optimize_weights(g, [query], flaky_agent, lambda r, q: r,
                         OptimizerConfig(epochs=10, seed=0))
    assert len(err.value.trace.records) == 2


def test_trace_line_format(fsm):
    g, qid = two_chain_graph(fsm)
    agent, reward_fn = constant_agent(1.0, 0.0)
    query = TrainingQuery("anchor", np.array([1.0, 0.0]), query_id=qid)
    lines = []
    optimize_weights(
        g, [query], agent, reward_fn, OptimizerConfig(epochs=3, seed=0),
        trace_sink=lambda rec: lines.append(rec.as_line()),
    )
    assert len(lines) == 3
    first = lines[0].split("\t")
    assert first[0] == "0" and first[1] == qid
    assert first[2].startswith("m")
    float(first[3]), float(first[4]), float(first[5])  # parse cleanly
