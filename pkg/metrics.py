#!/usr/bin/env python3
"""
Metrics Module for Graph of Thoughts Runner
Prompting-scheme topologies and their latency/volume tradeoff
"""

import csv
import io
import logging
from dataclasses import dataclass

from errors import InvalidParameters
from thought_graph import EdgeKind, GraphDelta, ReasoningState, Thought, apply_delta, latency, volume

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ('scheme', 'k', 'N', 'latency', 'volume')


@dataclass(frozen=True)
class Chain:
    n: int


@dataclass(frozen=True)
class MultiChain:
    """k chains of n/k thoughts hanging off one shared starting thought"""
    k: int
    n: int


@dataclass(frozen=True)
class KaryTree:
    k: int
    depth: int


@dataclass(frozen=True)
class Hourglass:
    """Complete k-ary tree whose leaves feed a mirrored tree ending in one sink"""
    k: int
    depth: int


@dataclass
class Topology:
    shape: object
    state: ReasoningState
    final: int

    @property
    def vertex_count(self):
        return len(self.state)


class _Builder:
    """Collects vertices and edges, then realizes them as one graph delta"""

    def __init__(self):
        self.thoughts = []
        self.edges = []

    def vertex(self, *parents):
        thought_id = len(self.thoughts)
        self.thoughts.append(Thought(id=thought_id, content=None, creation_index=thought_id))
        self.edges.extend((p, thought_id, EdgeKind.GENERATE) for p in parents)
        return thought_id

    def fan_in(self, parents):
        thought_id = len(self.thoughts)
        self.thoughts.append(Thought(id=thought_id, content=None, creation_index=thought_id))
        self.edges.extend((p, thought_id, EdgeKind.AGGREGATE) for p in parents)
        return thought_id

    def state(self):
        return apply_delta(ReasoningState(), GraphDelta(v_plus=tuple(self.thoughts),
                                                        e_plus=tuple(self.edges)))


def _check(condition, message):
    if not condition:
        raise InvalidParameters(message)


def _tree_levels(builder, k, depth):
    """Vertex ids of a complete k-ary tree, level by level"""
    levels = [[builder.vertex()]]
    for _ in range(depth):
        levels.append([builder.vertex(parent) for parent in levels[-1] for _ in range(k)])
    return levels


def build_topology(shape):
    """
    Realize a scheme topology as a reasoning state

    The final thought is the chain end (first chain for MultiChain), the
    last leaf for a tree and the sink for an hourglass.

    Raises:
        InvalidParameters: parameters < 1, or n not divisible by k
    """
    builder = _Builder()
    if isinstance(shape, Chain):
        _check(shape.n >= 1, "Chain needs n >= 1")
        final = builder.vertex()
        for _ in range(shape.n - 1):
            final = builder.vertex(final)
    elif isinstance(shape, MultiChain):
        _check(shape.k >= 1 and shape.n >= 1, "MultiChain needs k, n >= 1")
        _check(shape.n % shape.k == 0, f"MultiChain n={shape.n} is not divisible by k={shape.k}")
        root = builder.vertex()
        ends = []
        for _ in range(shape.k):
            tail = root
            for _ in range(shape.n // shape.k):
                tail = builder.vertex(tail)
            ends.append(tail)
        final = ends[0]
    elif isinstance(shape, KaryTree):
        _check(shape.k >= 1 and shape.depth >= 1, "KaryTree needs k, depth >= 1")
        final = _tree_levels(builder, shape.k, shape.depth)[-1][-1]
    elif isinstance(shape, Hourglass):
        _check(shape.k >= 1 and shape.depth >= 1, "Hourglass needs k, depth >= 1")
        level = _tree_levels(builder, shape.k, shape.depth)[-1]
        for _ in range(shape.depth - 1):
            level = [builder.fan_in(level[i:i + shape.k]) for i in range(0, len(level), shape.k)]
        final = builder.fan_in(level)
    else:
        raise InvalidParameters(f"Unknown topology shape: {shape!r}")
    return Topology(shape, builder.state(), final)


def scheme_metrics(topology):
    """(latency, volume) of the topology's final thought"""
    return latency(topology.state, topology.final), volume(topology.state, topology.final)


def closed_form(shape):
    """Expected (latency, volume) of a shape's final thought"""
    if isinstance(shape, Chain):
        return shape.n - 1, shape.n - 1
    if isinstance(shape, MultiChain):
        return shape.n // shape.k, shape.n // shape.k
    if isinstance(shape, KaryTree):
        return shape.depth, shape.depth
    if isinstance(shape, Hourglass):
        return 2 * shape.depth, hourglass_size(shape.k, shape.depth) - 1
    raise InvalidParameters(f"Unknown topology shape: {shape!r}")


def hourglass_size(k, depth):
    """Tree vertices, mirror internals (levels 1..depth-1) and the sink"""
    tree = sum(k ** i for i in range(depth + 1))
    mirror = sum(k ** i for i in range(1, depth))
    return tree + mirror + 1


def default_rows(k, depth):
    """The four schemes at N = k**depth thoughts"""
    n = k ** depth
    return [
        ('cot', Chain(n)),
        ('cot_sc', MultiChain(k, n)),
        ('tot', KaryTree(k, depth)),
        ('got', Hourglass(k, depth)),
    ]


def metrics_table(rows):
    """
    Render (scheme, shape) rows as CSV text

    Args:
        rows: Iterable of (scheme name, shape)

    Returns:
        CSV with a scheme,k,N,latency,volume header
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(TABLE_COLUMNS)
    for scheme, shape in rows:
        topology = build_topology(shape)
        lat, vol = scheme_metrics(topology)
        writer.writerow((scheme, getattr(shape, 'k', 1), topology.vertex_count, lat, vol))
        logger.debug("%s %s: latency %s, volume %s", scheme, shape, lat, vol)
    return out.getvalue()
