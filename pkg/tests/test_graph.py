import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memograph.graph import (
    GraphError,
    QueryOutcome,
    Relation,
    export_graph,
    import_graph,
)

from conftest import CASE2_PATH, MINIMAL_SUCCESS, SUCCESS_PATH, random_graph


def test_add_query_assigns_fresh_ids(empty_graph, embedder):
    before = len(empty_graph.queries)
    qid = empty_graph.add_query("who wrote X", embedder.embed("who wrote X"))
    assert qid == "q1"
    assert len(empty_graph.queries) == before + 1
    assert empty_graph.queries[qid].outcome is QueryOutcome.UNRESOLVED


def test_same_text_twice_gives_distinct_nodes(empty_graph, embedder):
    vec = embedder.embed("repeat me")
    a = empty_graph.add_query("repeat me", vec)
    b = empty_graph.add_query("repeat me", vec)
    assert a != b
    assert len(empty_graph.queries) == 2


def test_wrong_dimension_rejected(empty_graph):
    with pytest.raises(GraphError):
        empty_graph.add_query("bad", np.ones(5))


def test_duplicate_explicit_id_rejected(empty_graph, embedder):
    empty_graph.add_query("a", embedder.embed("a"), node_id="q7")
    with pytest.raises(GraphError):
        empty_graph.add_query("b", embedder.embed("b"), node_id="q7")
    # generated ids skip past the claimed one
    assert empty_graph.add_query("c", embedder.embed("c")) == "q8"


def test_attach_path_case2_failure(empty_graph, embedder):
    qid = empty_graph.add_query("q", embedder.embed("q"))
    tid = empty_graph.attach_path(qid, CASE2_PATH, "failure")
    edge = empty_graph.edge(qid, tid, Relation.QUERY_TO_PATH)
    assert edge.weight == 1.0
    assert empty_graph.queries[qid].outcome is QueryOutcome.FAILURE


def test_attach_path_rejects_invalid_sequence(empty_graph, embedder):
    qid = empty_graph.add_query("q", embedder.embed("q"))
    with pytest.raises(GraphError):
        empty_graph.attach_path(qid, ["End", "Start"], "success")
    with pytest.raises(GraphError):
        empty_graph.attach_path("q999", MINIMAL_SUCCESS, "success")


def test_query_outcome_becomes_mixed(empty_graph, embedder):
    qid = empty_graph.add_query("q", embedder.embed("q"))
    empty_graph.attach_path(qid, SUCCESS_PATH, "success")
    assert empty_graph.queries[qid].outcome is QueryOutcome.SUCCESS
    empty_graph.attach_path(qid, CASE2_PATH, "failure")
    assert empty_graph.queries[qid].outcome is QueryOutcome.MIXED


def test_link_path_to_meta_defaults_and_duplicates(wired_graph):
    t_new = wired_graph.attach_path("q2", SUCCESS_PATH, "success")
    edge = wired_graph.link_path_to_meta(t_new, "m2")
    assert edge.weight == 1.0
    with pytest.raises(GraphError):
        wired_graph.link_path_to_meta(t_new, "m2")
    with pytest.raises(GraphError):
        wired_graph.link_path_to_meta(t_new, "m999")
    with pytest.raises(GraphError):
        wired_graph.link_path_to_meta(t_new, "m1", weight=50.0)


def test_link_weight_round_trip(wired_graph):
    assert wired_graph.edge("t2", "m2", "path_to_meta").weight == 0.5


def test_provisional_link_weight(wired_graph):
    t_new = wired_graph.attach_path("q1", MINIMAL_SUCCESS, "success")
    edge = wired_graph.link_path_to_meta(t_new, "m2", provisional=True)
    assert edge.weight == 0.5
    assert edge.provisional


def test_empty_graph_round_trip(empty_graph):
    doc = export_graph(empty_graph)
    clone = import_graph(doc)
    assert export_graph(clone) == doc
    assert len(clone.queries) == len(clone.paths) == len(clone.metas) == 0


def test_mixed_graph_round_trip_bit_exact(wired_graph):
    wired_graph.edge("t1", "m1", "path_to_meta").weight = 0.1 + 0.2  # not representable exactly
    doc = export_graph(wired_graph)
    clone = import_graph(doc)
    for key, edge in wired_graph.edges.items():
        assert clone.edges[key].weight == edge.weight  # bit-exact
    for qid, q in wired_graph.queries.items():
        assert np.array_equal(clone.queries[qid].embedding, q.embedding)
    assert clone.to_json() == wired_graph.to_json()


def test_import_rejects_dangling_edge(wired_graph):
    doc = export_graph(wired_graph)
    doc["edges"].append(
        {"src": "t1", "dst": "m42", "relation": "path_to_meta", "weight": 1.0}
    )
    with pytest.raises(GraphError):
        import_graph(doc)


def test_import_rejects_version_mismatch(wired_graph):
    doc = export_graph(wired_graph)
    doc["format_version"] = 99
    with pytest.raises(GraphError):
        import_graph(doc)


def test_import_rejects_out_of_bounds_weight(wired_graph):
    doc = export_graph(wired_graph)
    doc["edges"][0]["weight"] = 100.0
    with pytest.raises(GraphError):
        import_graph(doc)


def test_layer_discipline_no_cross_edges(wired_graph):
    for edge in wired_graph.edges.values():
        if edge.relation is Relation.QUERY_TO_PATH:
            assert edge.src in wired_graph.queries and edge.dst in wired_graph.paths
        else:
            assert edge.src in wired_graph.paths and edge.dst in wired_graph.metas


@given(seed=st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_random_round_trip_identity(seed):
    g = random_graph(seed)
    doc = export_graph(g)
    clone = import_graph(doc)
    assert export_graph(clone) == doc
    assert clone.weight_hash() == g.weight_hash()


@given(seed=st.integers(0, 10_000), data=st.data())
@settings(max_examples=30, deadline=None)
def test_weights_stay_in_bounds_under_mutation(seed, data):
    g = random_graph(seed)
    w_min, w_max = g.weight_bounds
    keys = list(g.edges)
    for _ in range(data.draw(st.integers(1, 20))):
        key = keys[data.draw(st.integers(0, len(keys) - 1))]
        delta = data.draw(st.floats(-100, 100, allow_nan=False))
        g.set_weight(key[0], key[1], key[2], g.edges[key].weight + delta)
    assert all(w_min <= e.weight <= w_max for e in g.edges.values())
