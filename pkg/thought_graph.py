#!/usr/bin/env python3
"""
Thought Graph Module for Graph of Thoughts Runner
Reasoning state (thoughts and typed edges), graph deltas and path metrics
"""

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, FrozenSet, Optional, Tuple

import networkx as nx

from errors import InconsistentDelta, UnknownThought

GRS_FORMAT = 'grs-v1'


class EdgeKind(Enum):
    """Transformation that produced an edge"""
    GENERATE = 'generate'
    AGGREGATE = 'aggregate'
    REFINE = 'refine'


@dataclass
class Thought:
    """
    One vertex of the reasoning graph.

    content is the parsed payload (digit list, pair of lists, count map or
    text) and is None when the LLM response could not be parsed. reference
    is whatever a local scorer needs to judge the thought (e.g. the list the
    thought was supposed to sort).
    """
    id: int
    content: Any
    thought_class: str = 'solution'
    score: Optional[Fraction] = None
    valid: Optional[bool] = None
    origin_op: Optional[int] = None
    creation_index: int = 0
    part: Optional[int] = None
    reference: Any = None
    raw: Optional[str] = None
    verdict: Optional[bool] = None
    error: Optional[int] = None

    def content_digest(self):
        """sha256 over a canonical JSON rendering of the content"""
        payload = json.dumps(self.content, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class GraphDelta:
    """Vertices and edges added (plus) and removed (minus) by one transformation"""
    v_plus: Tuple[Thought, ...] = ()
    e_plus: Tuple[Tuple[int, int, EdgeKind], ...] = ()
    v_minus: FrozenSet[int] = frozenset()
    e_minus: FrozenSet[Tuple[int, int]] = frozenset()

    def is_empty(self):
        return not (self.v_plus or self.e_plus or self.v_minus or self.e_minus)


@dataclass
class ReasoningState:
    """Directed graph of thoughts with forward and reverse adjacency"""
    vertices: Dict[int, Thought] = field(default_factory=dict)
    forward: Dict[int, Dict[int, EdgeKind]] = field(default_factory=dict)
    reverse: Dict[int, Dict[int, EdgeKind]] = field(default_factory=dict)
    next_id: int = 0

    def __contains__(self, thought_id):
        return thought_id in self.vertices

    def __len__(self):
        return len(self.vertices)

    def get(self, thought_id):
        try:
            return self.vertices[thought_id]
        except KeyError:
            raise UnknownThought(f"Thought {thought_id} is not in the reasoning state") from None

    def annotate(self, thought_id, **changes):
        """Replace a thought's annotations (score, valid, verdict, error) in place"""
        thought = replace(self.get(thought_id), **changes)
        self.vertices[thought_id] = thought
        return thought

    def predecessors(self, thought_id):
        self.get(thought_id)
        return sorted(self.reverse[thought_id])

    def successors(self, thought_id):
        self.get(thought_id)
        return sorted(self.forward[thought_id])

    def edges(self):
        """Yield (source, target, kind) in source then target order"""
        for source in sorted(self.forward):
            for target in sorted(self.forward[source]):
                yield source, target, self.forward[source][target]

    def to_document(self):
        """
        Export the state as a "grs-v1" document

        Returns:
            Dict with the format header, vertex list and edge list
        """
        vertices = []
        for thought in sorted(self.vertices.values(), key=lambda t: t.creation_index):
            vertices.append({
                'id': thought.id,
                'class': thought.thought_class,
                'score': None if thought.score is None else str(thought.score),
                'valid': thought.valid,
                'origin_op': thought.origin_op,
                'part': thought.part,
                'digest': thought.content_digest(),
            })
        edges = [{'source': s, 'target': t, 'kind': k.value} for s, t, k in self.edges()]
        return {'format': GRS_FORMAT, 'vertices': vertices, 'edges': edges}


def _has_cycle(forward):
    graph = nx.from_dict_of_lists({v: list(targets) for v, targets in forward.items()},
                                  create_using=nx.DiGraph)
    return not nx.is_directed_acyclic_graph(graph)


def apply_delta(state, delta):
    """
    Apply a graph delta and return the new reasoning state

    V' = (V + V_plus) - V_minus and E' = (E + E_plus) - E_minus. Edges
    incident to removed vertices are dropped with them. The input state is
    left untouched.

    Raises:
        InconsistentDelta: the delta removes or connects unknown vertices,
            reuses an id, refines into an existing vertex or closes a cycle
    """
    if delta.is_empty():
        return state

    new_ids = [t.id for t in delta.v_plus]
    if len(set(new_ids)) != len(new_ids):
        raise InconsistentDelta("Delta adds the same thought id twice")
    for thought_id in new_ids:
        if thought_id in state.vertices or thought_id < state.next_id:
            raise InconsistentDelta(f"Thought id {thought_id} is already used")
    if delta.v_minus & set(new_ids):
        raise InconsistentDelta("Delta adds and removes the same thought")
    for thought_id in delta.v_minus:
        if thought_id not in state.vertices:
            raise InconsistentDelta(f"Cannot remove absent thought {thought_id}")
    for source, target in delta.e_minus:
        if target not in state.forward.get(source, {}):
            raise InconsistentDelta(f"Cannot remove absent edge {source}->{target}")

    vertices = dict(state.vertices)
    forward = dict(state.forward)
    reverse = dict(state.reverse)
    touched = set()

    def _own(vertex):
        if vertex not in touched:
            forward[vertex] = dict(forward[vertex])
            reverse[vertex] = dict(reverse[vertex])
            touched.add(vertex)

    for thought in delta.v_plus:
        vertices[thought.id] = thought
        forward[thought.id] = {}
        reverse[thought.id] = {}
        touched.add(thought.id)

    for source, target in delta.e_minus:
        _own(source)
        _own(target)
        del forward[source][target]
        del reverse[target][source]

    for thought_id in delta.v_minus:
        for target in list(forward[thought_id]):
            _own(target)
            del reverse[target][thought_id]
        for source in list(reverse[thought_id]):
            _own(source)
            del forward[source][thought_id]
        del vertices[thought_id], forward[thought_id], reverse[thought_id]

    fresh = set(new_ids)
    for source, target, kind in delta.e_plus:
        if source not in vertices or target not in vertices:
            raise InconsistentDelta(f"Edge {source}->{target} references an absent thought")
        if kind is EdgeKind.REFINE and target not in fresh:
            raise InconsistentDelta(f"Refine edge {source}->{target} must target a new thought")
        _own(source)
        _own(target)
        forward[source][target] = kind
        reverse[target][source] = kind

    if delta.e_plus and _has_cycle(forward):
        raise InconsistentDelta("Delta closes a cycle in the reasoning graph")

    next_id = max([state.next_id] + [i + 1 for i in new_ids])
    return ReasoningState(vertices=vertices, forward=forward, reverse=reverse, next_id=next_id)


def ancestors(state, thought_id):
    """All ids with a directed path to thought_id (excluding itself)"""
    state.get(thought_id)
    seen = set()
    frontier = deque(state.reverse[thought_id])
    while frontier:
        vertex = frontier.popleft()
        if vertex in seen:
            continue
        seen.add(vertex)
        frontier.extend(state.reverse[vertex])
    return seen


def volume(state, thought_id):
    """Number of preceding thoughts that could have impacted thought_id"""
    return len(ancestors(state, thought_id))


def latency(state, thought_id):
    """
    Longest path (in edges) from any source thought to thought_id

    Args:
        state: ReasoningState
        thought_id: Target thought

    Returns:
        Hop count; 0 for a source
    """
    members = ancestors(state, thought_id) | {thought_id}
    indegree = {v: sum(1 for p in state.reverse[v] if p in members) for v in members}
    depth = {v: 0 for v in members}
    ready = deque(sorted(v for v, d in indegree.items() if d == 0))
    while ready:
        vertex = ready.popleft()
        for target in state.forward[vertex]:
            if target not in members:
                continue
            depth[target] = max(depth[target], depth[vertex] + 1)
            indegree[target] -= 1
            if indegree[target] == 0:
                ready.append(target)
    return depth[thought_id]
