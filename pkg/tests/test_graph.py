"""
Tests for the partial-order model: expansion, closure, cycles, layering
and derived pairwise relations.
"""

import itertools
import random

import pytest

from src.timeline.errors import CyclicGraph, GraphError, UnknownEvent
from src.timeline.graph import (
    CYCLE_REPORT_LIMIT,
    RelationLabel,
    TimelineGraph,
    coex_clusters,
    detect_cycles,
    expand_coex,
    gold_closure,
    is_weakly_connected,
    layering,
    pairwise_relation,
    relation_table,
    transitive_closure,
    weak_components,
)


def complete_digraph(n):
    ids = [f"e{i}" for i in range(1, n + 1)]
    return TimelineGraph.build(ids, [(x, y) for x in ids for y in ids if x != y])


def chain(*ids):
    return TimelineGraph.build(ids, list(zip(ids, ids[1:])))


def random_dag(rng, max_nodes=8, p=0.3):
    n = rng.randint(1, max_nodes)
    ids = [f"v{i}" for i in range(n)]
    order = ids[:]
    rng.shuffle(order)
    edges = [(order[i], order[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return TimelineGraph.build(ids, edges)


def brute_force_reachability(graph):
    """Pairs connected by a path, by repeated relaxation over the edge list"""
    reach = {v: set() for v in graph.event_ids}
    for x, y in graph.precedence_edges:
        reach[x].add(y)
    changed = True
    while changed:
        changed = False
        for v in graph.event_ids:
            extra = set()
            for w in reach[v]:
                extra |= reach[w]
            if not extra <= reach[v]:
                reach[v] |= extra
                changed = True
    return {(x, y) for x in reach for y in reach[x] if x != y}


class TestTimelineGraph:
    def test_undeclared_edge_endpoint(self):
        with pytest.raises(UnknownEvent):
            TimelineGraph.build(["a", "b"], [("a", "z")])

    def test_coex_link_needs_two_events(self):
        with pytest.raises(GraphError):
            TimelineGraph.build(["a", "b"], coex=[("a", "a")])

    def test_events_sorted_by_index(self):
        g = TimelineGraph.build(["c", "a", "b"])
        assert g.event_ids == ("c", "a", "b")
        assert g.index_of("b") == 3
        assert g.by_index(1).id == "c"
        assert g.by_index(9) is None


class TestExpandCoex:
    def test_incoming_edge_spreads_over_cluster(self):
        g = TimelineGraph.build(["a", "b", "c"], [("a", "b")], coex=[("b", "c")])
        assert expand_coex(g).precedence_edges == {("a", "b"), ("a", "c")}

    def test_outgoing_edge_spreads_over_cluster(self):
        g = TimelineGraph.build(["b", "c", "d"], [("b", "d")], coex=[("b", "c")])
        assert expand_coex(g).precedence_edges == {("b", "d"), ("c", "d")}

    def test_no_coex_is_identity(self):
        g = chain("a", "b", "c")
        assert expand_coex(g) == g

    def test_intra_cluster_edge_preserved(self):
        g = TimelineGraph.build(["a", "b", "c"], [("a", "b")], coex=[("a", "b"), ("b", "c")])
        assert expand_coex(g).precedence_edges == {("a", "b")}

    def test_idempotent(self):
        g = TimelineGraph.build(["a", "b", "c", "d", "e"], [("a", "b"), ("c", "e")],
                                coex=[("b", "c"), ("c", "d")])
        once = expand_coex(g)
        assert expand_coex(once) == once

    def test_clusters_are_components(self):
        g = TimelineGraph.build(["a", "b", "c", "d", "e"], coex=[("a", "b"), ("b", "c"), ("d", "e")])
        assert [c.members for c in coex_clusters(g)] == [("a", "b", "c"), ("d", "e")]


class TestTransitiveClosure:
    def test_chain(self):
        assert transitive_closure(chain("a", "b", "c")).before_pairs == {("a", "b"), ("b", "c"), ("a", "c")}

    def test_two_cycle(self):
        g = TimelineGraph.build(["a", "b"], [("a", "b"), ("b", "a")])
        assert transitive_closure(g).before_pairs == {("a", "b"), ("b", "a")}

    def test_edgeless(self):
        closure = transitive_closure(TimelineGraph.build(["a", "b"]))
        assert closure.before_pairs == frozenset()
        assert closure.coex_pairs == frozenset()

    def test_coex_pairs_exclude_ordered_members(self):
        g = TimelineGraph.build(["a", "b", "c"], [("a", "b")], coex=[("a", "b"), ("b", "c")])
        closure = transitive_closure(g)
        assert closure.coex_pairs == {frozenset(("a", "c")), frozenset(("b", "c"))}

    def test_idempotent_and_contains_edges(self):
        rng = random.Random(7)
        for _ in range(30):
            g = random_dag(rng)
            closure = transitive_closure(g)
            assert set(g.precedence_edges) <= closure.before_pairs
            closed = TimelineGraph.build(g.event_ids, closure.before_pairs)
            assert transitive_closure(closed) == closure

    def test_matches_brute_force_on_random_dags(self):
        rng = random.Random(2024)
        for _ in range(200):
            g = random_dag(rng, max_nodes=8, p=0.3)
            assert transitive_closure(g).before_pairs == brute_force_reachability(g)

    def test_no_self_pairs(self):
        g = TimelineGraph.build(["a", "b", "c"], [("a", "b"), ("b", "c"), ("c", "a")])
        assert all(x != y for x, y in transitive_closure(g).before_pairs)


class TestDetectCycles:
    def test_dag(self):
        assert detect_cycles(chain("a", "b", "c")) == []

    def test_two_cycle(self):
        g = TimelineGraph.build(["a", "b"], [("a", "b"), ("b", "a")])
        assert detect_cycles(g) == [["a", "b"]]

    def test_diamond(self):
        g = TimelineGraph.build(["a", "b", "c", "d"], [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")])
        assert detect_cycles(g) == []

    def test_cycle_created_by_expansion(self):
        # a before b, c before a, c shares a cluster with b
        g = TimelineGraph.build(["a", "b", "c"], [("a", "b"), ("c", "a")], coex=[("b", "c")])
        assert detect_cycles(g) == []
        assert detect_cycles(expand_coex(g)) != []

    def test_reported_cycles_follow_edges(self):
        g = TimelineGraph.build(["a", "b", "c"], [("a", "b"), ("b", "c"), ("c", "a")])
        for cycle in detect_cycles(g):
            for x, y in zip(cycle, cycle[1:] + cycle[:1]):
                assert (x, y) in g.precedence_edges

    def test_dense_graph_report_is_bounded(self):
        g = complete_digraph(12)
        assert len(detect_cycles(g, limit=20)) == 20
        cycles = detect_cycles(g)
        assert len(cycles) == CYCLE_REPORT_LIMIT
        assert all(c[0] == "e1" or "e1" not in c for c in cycles)


class TestLayering:
    def test_chain(self):
        assert layering(chain("a", "b", "c")) == [["a"], ["b"], ["c"]]

    def test_diamond(self):
        g = TimelineGraph.build(["a", "b", "c", "d"], [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")])
        assert layering(g) == [["a"], ["b", "c"], ["d"]]

    def test_skip_edge_uses_longest_path(self):
        g = TimelineGraph.build(["a", "b", "c"], [("a", "b"), ("b", "c"), ("a", "c")])
        assert layering(g) == [["a"], ["b"], ["c"]]

    def test_cluster_shares_layer(self, monkeypox):
        layers = layering(monkeypox.graph)
        assert layers == [["T4"], ["T3"], ["T1", "T5"]]

    def test_cycle_raises(self):
        g = TimelineGraph.build(["a", "b"], [("a", "b"), ("b", "a")])
        with pytest.raises(CyclicGraph) as info:
            layering(g)
        assert info.value.cycles == [["a", "b"]]

    def test_dense_cycle_raises_with_a_bounded_report(self):
        with pytest.raises(CyclicGraph) as info:
            layering(complete_digraph(12))
        assert 0 < len(info.value.cycles) <= CYCLE_REPORT_LIMIT

    def test_preserves_gold_order(self, fixture_docs):
        for doc in fixture_docs:
            depth = {eid: k for k, layer in enumerate(layering(doc.graph)) for eid in layer}
            for x, y in gold_closure(doc.graph).before_pairs:
                assert depth[x] < depth[y]


class TestPairwiseRelation:
    def test_chain_ends(self):
        assert pairwise_relation(chain("a", "b", "c"), "a", "c") is RelationLabel.BEFORE
        assert pairwise_relation(chain("a", "b", "c"), "c", "a") is RelationLabel.AFTER

    def test_cluster_members(self):
        g = TimelineGraph.build(["a", "b", "c"], [("a", "b")], coex=[("b", "c")])
        assert pairwise_relation(g, "b", "c") is RelationLabel.COEX

    def test_disconnected(self):
        g = TimelineGraph.build(["a", "b", "c", "d"], [("a", "b"), ("c", "d")])
        assert pairwise_relation(g, "a", "d") is RelationLabel.NONE

    def test_mutual_reachability_is_none(self):
        g = TimelineGraph.build(["a", "b"], [("a", "b"), ("b", "a")])
        assert pairwise_relation(g, "a", "b") is RelationLabel.NONE

    def test_unknown_event(self):
        with pytest.raises(UnknownEvent):
            pairwise_relation(chain("a", "b"), "a", "zz")

    def test_same_event(self):
        with pytest.raises(GraphError):
            pairwise_relation(chain("a", "b"), "a", "a")

    def test_antisymmetric_on_fixtures(self, fixture_docs):
        for doc in fixture_docs:
            table = relation_table(doc.graph)
            for x, y in itertools.permutations(doc.graph.event_ids, 2):
                assert table[(x, y)] is table[(y, x)].inverse()
                assert table[(x, y)] is pairwise_relation(doc.graph, x, y)


class TestConnectivity:
    def test_fixture_graphs_are_connected(self, fixture_docs):
        for doc in fixture_docs:
            assert is_weakly_connected(doc.graph), doc.doc_id

    def test_components_largest_first(self):
        g = TimelineGraph.build(["a", "b", "c", "d"], [("a", "b")], coex=[("b", "c")])
        assert weak_components(g) == [["a", "b", "c"], ["d"]]
