"""
Partial-order timeline model and the graph algorithms built on it.

A timeline is a set of events, directed precedence edges ("x starts before y
starts") and undirected COEX links ("x and y started around the same time").
Connected components of the COEX links form clusters; precedence edges into
or out of a cluster apply to every member of it.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import islice
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple
import logging

import networkx as nx

from .errors import CyclicGraph, GraphError, UnknownEvent

logger = logging.getLogger(__name__)

ARGUMENT_ROLES = ("ARG0", "ARG1", "ARG2", "ARG3", "ARG4", "ARG5")

Pair = Tuple[str, str]


class RelationLabel(str, Enum):
    """Start-time relation of an ordered event pair (x, y)"""
    BEFORE = "BEFORE"
    AFTER = "AFTER"
    COEX = "COEX"
    NONE = "NONE"

    def inverse(self) -> "RelationLabel":
        if self is RelationLabel.BEFORE:
            return RelationLabel.AFTER
        if self is RelationLabel.AFTER:
            return RelationLabel.BEFORE
        return self


@dataclass(frozen=True)
class Argument:
    role: str
    text: str
    span: Tuple[int, int]


@dataclass(frozen=True)
class Event:
    id: str
    mention: str
    span: Tuple[int, int]
    index: int
    arguments: Tuple[Argument, ...] = ()


@dataclass(frozen=True)
class CoexCluster:
    members: Tuple[str, ...]


@dataclass(frozen=True)
class ClosurePairSet:
    before_pairs: FrozenSet[Pair] = frozenset()
    coex_pairs: FrozenSet[FrozenSet[str]] = frozenset()

    def items(self) -> FrozenSet[tuple]:
        """Labeled pair items used by the closure metric"""
        before = {("BEFORE", x, y) for x, y in self.before_pairs}
        coex = {("COEX",) + tuple(sorted(p)) for p in self.coex_pairs}
        return frozenset(before | coex)

    def restricted(self, event_ids: Iterable[str]) -> "ClosurePairSet":
        keep = set(event_ids)
        return ClosurePairSet(
            before_pairs=frozenset(p for p in self.before_pairs if p[0] in keep and p[1] in keep),
            coex_pairs=frozenset(p for p in self.coex_pairs if p <= keep),
        )


@dataclass(frozen=True)
class TimelineGraph:
    events: Tuple[Event, ...]
    precedence_edges: FrozenSet[Pair] = frozenset()
    coex_links: FrozenSet[FrozenSet[str]] = frozenset()
    _by_id: Dict[str, Event] = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        ordered = tuple(sorted(self.events, key=lambda e: e.index))
        object.__setattr__(self, "events", ordered)
        object.__setattr__(self, "_by_id", {e.id: e for e in ordered})
        object.__setattr__(self, "precedence_edges", frozenset(self.precedence_edges))
        object.__setattr__(self, "coex_links", frozenset(frozenset(p) for p in self.coex_links))
        for x, y in self.precedence_edges:
            for endpoint in (x, y):
                if endpoint not in self._by_id:
                    raise UnknownEvent(f"edge {x}->{y} cites undeclared event {endpoint}")
        for link in self.coex_links:
            if len(link) != 2:
                raise GraphError(f"COEX link must join two distinct events: {sorted(link)}")
            for endpoint in link:
                if endpoint not in self._by_id:
                    raise UnknownEvent(f"COEX link cites undeclared event {endpoint}")

    @classmethod
    def build(
        cls,
        event_ids: Sequence[str],
        edges: Iterable[Pair] = (),
        coex: Iterable[Iterable[str]] = (),
    ) -> "TimelineGraph":
        """Graph over placeholder events whose textual order is the given order"""
        events = tuple(
            Event(id=eid, mention=eid, span=(0, 0), index=i)
            for i, eid in enumerate(event_ids, start=1)
        )
        return cls(events=events, precedence_edges=frozenset(edges),
                   coex_links=frozenset(frozenset(p) for p in coex))

    @property
    def event_ids(self) -> Tuple[str, ...]:
        return tuple(e.id for e in self.events)

    def event(self, event_id: str) -> Event:
        try:
            return self._by_id[event_id]
        except KeyError:
            raise UnknownEvent(f"unknown event {event_id}") from None

    def has_event(self, event_id: str) -> bool:
        return event_id in self._by_id

    def index_of(self, event_id: str) -> int:
        return self.event(event_id).index

    def by_index(self, index: int) -> Optional[Event]:
        for e in self.events:
            if e.index == index:
                return e
        return None

    def with_relations(
        self,
        edges: Iterable[Pair] = (),
        coex: Iterable[Iterable[str]] = (),
    ) -> "TimelineGraph":
        """Same events, different relations (used for predicted graphs)"""
        return TimelineGraph(events=self.events, precedence_edges=frozenset(edges),
                             coex_links=frozenset(frozenset(p) for p in coex))

    def to_digraph(self) -> nx.DiGraph:
        dg = nx.DiGraph()
        dg.add_nodes_from(self.event_ids)
        # edges in textual order
        dg.add_edges_from(sorted(self.precedence_edges, key=lambda p: (self.index_of(p[0]), self.index_of(p[1]))))
        return dg


def coex_clusters(graph: TimelineGraph) -> List[CoexCluster]:
    """Connected components of the COEX links, members in textual order"""
    ug = nx.Graph()
    ug.add_edges_from(tuple(link) for link in graph.coex_links)
    clusters = []
    for component in nx.connected_components(ug):
        members = tuple(sorted(component, key=graph.index_of))
        if len(members) >= 2:
            clusters.append(CoexCluster(members=members))
    clusters.sort(key=lambda c: graph.index_of(c.members[0]))
    return clusters


def expand_coex(graph: TimelineGraph) -> TimelineGraph:
    """Spread precedence edges across COEX clusters; intra-cluster edges stay as annotated"""
    clusters = coex_clusters(graph)
    if not clusters:
        return graph
    member_of = {m: c for c in clusters for m in c.members}

    edges = set(graph.precedence_edges)
    for u, v in graph.precedence_edges:
        cu, cv = member_of.get(u), member_of.get(v)
        if cu is not None and cu is cv:
            continue
        sources = cu.members if cu is not None else (u,)
        targets = cv.members if cv is not None else (v,)
        for s in sources:
            for t in targets:
                edges.add((s, t))
    return replace(graph, precedence_edges=frozenset(edges))


def transitive_closure(graph: TimelineGraph) -> ClosurePairSet:
    """Reachability pairs of the graph as given; cycles yield both directions"""
    dg = graph.to_digraph()
    before = set()
    for node in dg.nodes:
        for reached in nx.descendants(dg, node):
            if reached != node:
                before.add((node, reached))

    coex = set()
    for cluster in coex_clusters(graph):
        members = cluster.members
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                if (a, b) not in before and (b, a) not in before:
                    coex.add(frozenset((a, b)))
    return ClosurePairSet(before_pairs=frozenset(before), coex_pairs=frozenset(coex))


def gold_closure(graph: TimelineGraph) -> ClosurePairSet:
    """Closure after COEX expansion; the one used for scoring"""
    return transitive_closure(expand_coex(graph))


CYCLE_REPORT_LIMIT = 100


def detect_cycles(graph: TimelineGraph, limit: int = CYCLE_REPORT_LIMIT) -> List[List[str]]:
    """Simple cycles of the graph, at most `limit` of them; [] when acyclic"""
    dg = graph.to_digraph()
    if nx.is_directed_acyclic_graph(dg):
        return []
    cycles = []
    for cycle in islice(nx.simple_cycles(dg), limit):
        # rotate so the earliest event in textual order leads
        start = min(range(len(cycle)), key=lambda i: graph.index_of(cycle[i]))
        cycles.append(cycle[start:] + cycle[:start])
    cycles.sort(key=lambda c: (len(c), [graph.index_of(v) for v in c]))
    return cycles


def layering(graph: TimelineGraph) -> List[List[str]]:
    """
    Longest-path layers of the COEX-expanded graph.

    A source sits in layer 1 and every other event one layer after its latest
    predecessor, so each precedence pair spans strictly increasing layers.
    """
    expanded = expand_coex(graph)
    dg = expanded.to_digraph()
    if not nx.is_directed_acyclic_graph(dg):
        raise CyclicGraph(detect_cycles(expanded))
    return [sorted(generation, key=graph.index_of) for generation in nx.topological_generations(dg)]


def relation_table(graph: TimelineGraph) -> Dict[Pair, RelationLabel]:
    """Relation of every ordered pair of distinct events"""
    closure = gold_closure(graph)
    table = {}
    ids = graph.event_ids
    for x in ids:
        for y in ids:
            if x == y:
                continue
            table[(x, y)] = _relation_from_closure(closure, x, y)
    return table


def pairwise_relation(graph: TimelineGraph, x: str, y: str) -> RelationLabel:
    graph.event(x)
    graph.event(y)
    if x == y:
        raise GraphError(f"pairwise relation needs two distinct events, got {x} twice")
    return _relation_from_closure(gold_closure(graph), x, y)


def _relation_from_closure(closure: ClosurePairSet, x: str, y: str) -> RelationLabel:
    forward = (x, y) in closure.before_pairs
    backward = (y, x) in closure.before_pairs
    if forward and not backward:
        return RelationLabel.BEFORE
    if backward and not forward:
        return RelationLabel.AFTER
    if forward and backward:
        return RelationLabel.NONE
    if frozenset((x, y)) in closure.coex_pairs:
        return RelationLabel.COEX
    return RelationLabel.NONE


def weak_components(graph: TimelineGraph) -> List[List[str]]:
    """Components over edges and COEX links together, largest first"""
    ug = nx.Graph()
    ug.add_nodes_from(graph.event_ids)
    ug.add_edges_from(graph.precedence_edges)
    ug.add_edges_from(tuple(link) for link in graph.coex_links)
    components = [sorted(c, key=graph.index_of) for c in nx.connected_components(ug)]
    components.sort(key=lambda c: (-len(c), graph.index_of(c[0])))
    return components


def is_weakly_connected(graph: TimelineGraph) -> bool:
    return len(weak_components(graph)) <= 1
