#!/usr/bin/env python3
"""
Shared pytest fixtures for Graph of Thoughts Runner
Configuration isolation, registries and small reasoning-state builders
"""

import pytest

from config import CONFIG
from thought_graph import EdgeKind, GraphDelta, ReasoningState, Thought, apply_delta


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: 100-instance experiments on the mock backend')


@pytest.fixture(autouse=True)
def restore_config():
    """Snapshot CONFIG so tests that tweak settings cannot leak them"""
    saved = dict(CONFIG)
    yield CONFIG
    CONFIG.clear()
    CONFIG.update(saved)


@pytest.fixture
def thought():
    def make(thought_id, content=None, **fields):
        fields.setdefault('creation_index', thought_id)
        return Thought(id=thought_id, content=content, **fields)
    return make


@pytest.fixture
def graph(thought):
    """Build a reasoning state from an edge list over ids 0..n-1"""
    def make(n, edges=(), kind=EdgeKind.GENERATE):
        delta = GraphDelta(v_plus=tuple(thought(i) for i in range(n)),
                           e_plus=tuple((s, t, kind) for s, t in edges))
        return apply_delta(ReasoningState(), delta)
    return make
