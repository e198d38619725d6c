"""Shared fixtures and independent oracles used across the suite."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from itertools import combinations

import numpy as np
import pytest

from ctxmem import ContextualMemory

TS0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def ts(seconds: int = 0) -> datetime:
    return TS0 + timedelta(seconds=seconds)


def insert_text(memory, tags, embedding, content="c", seconds=0):
    return memory.insert_context(
        content=content,
        tags=tags,
        modality="text",
        uri=None,
        timestamp=ts(seconds),
        embedding=np.asarray(embedding, dtype=np.float64),
    )


def brute_force_graph(memory: ContextualMemory):
    """Recompute tags, means, and edges straight from the context-node table.

    Returns (tag -> set of context ids, tag -> mean embedding,
    (a, b) -> shared count) independently of the incremental bookkeeping.
    """
    tag_members: dict[str, set[str]] = {}
    for node in memory.contexts():
        for name in node.tags:
            tag_members.setdefault(name, set()).add(node.id)

    tag_means = {}
    for name, members in tag_members.items():
        vectors = [memory.get_context(cid).embedding for cid in sorted(members)]
        tag_means[name] = np.mean(np.stack(vectors), axis=0)

    edge_counts = {}
    for a, b in combinations(sorted(tag_members), 2):
        shared = len(tag_members[a] & tag_members[b])
        if shared:
            edge_counts[(a, b)] = shared
    return tag_members, tag_means, edge_counts


def assert_graph_consistent(memory: ContextualMemory, tol=1e-9):
    """Edge biconditional, exact shared counts, and tag-mean agreement."""
    tag_members, tag_means, edge_counts = brute_force_graph(memory)

    assert set(memory.tag_names()) == set(tag_members)
    live_edges = {(a, b): n for a, b, n in memory.edges()}
    assert live_edges == edge_counts
    for name, members in tag_members.items():
        tag = memory.get_tag(name)
        assert tag.context_ids == frozenset(members)
        np.testing.assert_allclose(tag.mean_embedding, tag_means[name], atol=tol, rtol=0)


def cosine_oracle(a, b) -> float:
    """Independent cosine used to check search ranking paths."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.sqrt(float(np.sum(a * a)))
    nb = np.sqrt(float(np.sum(b * b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.sum(a * b) / (na * nb))


@pytest.fixture
def memory() -> ContextualMemory:
    return ContextualMemory()
