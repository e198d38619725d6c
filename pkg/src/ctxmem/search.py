"""Concept-first retrieval: tree descent, top-k concepts, personalized
expansion over the tag graph, then cosine ranking of concept-relevant
context nodes.

The two entry points mirror each other: :func:`cope_search` finds candidate
tags by greedy descent through the contextual tree, while
:func:`flat_cope_search` scans every tag mean instead (no tree, no
staleness). Both then expand the tag set with graph neighbors and rank
only the contexts attached to those tags. The ``*_embedded`` variants skip
query embedding and are what the benchmark times.

All ranking ties break deterministically: score desc, then id/name asc.
Search is read-only; any number may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import MODALITIES, as_embedding, mean_embedding
from .errors import EmptyInputError, EmptySearchError, StaleIndexError, ValidationError


@dataclass(frozen=True)
class QueryPart:
    """One multimodal query component: text or a media locator plus its modality."""

    content: str
    modality: str = "text"

    def __post_init__(self):
        if not self.content:
            raise ValidationError("query part content must be nonempty")
        if self.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {self.modality!r}")


@dataclass(frozen=True)
class SearchResult:
    tags: tuple[str, ...]
    contexts: tuple[tuple[str, float], ...] = field(default_factory=tuple)


def fuse_query(parts, embedder) -> np.ndarray:
    """Mean of the per-part embeddings."""
    parts = list(parts)
    if not parts:
        raise EmptyInputError("query must have at least one part")
    return mean_embedding([embedder.embed(p.content, p.modality) for p in parts])


def personalized_tags(seed_tags, memory, limit: int) -> list[str]:
    """Graph neighbors of the seeds, ranked by summed shared count desc, name asc.

    Seeds themselves are excluded; the list is truncated to ``limit``.
    """
    if limit < 0:
        raise ValidationError("limit must be >= 0")
    seeds = list(seed_tags)
    seed_set = set(seeds)
    totals: dict[str, int] = {}
    for seed in seeds:
        for name, count in memory.neighbors(seed):
            if name not in seed_set:
                totals[name] = totals.get(name, 0) + count
    ranked = sorted(totals.items(), key=lambda item: (-item[1], item[0]))
    return [name for name, _ in ranked[:limit]]


def cope_search(query, topk, memory, tree, embedder, personalization_limit=None) -> SearchResult:
    """Retrieve concept-relevant contexts via greedy tree descent.

    Stages: fuse the query parts, descend the tree to a leaf-parent, take
    its top-k leaf tags, expand with personalized (neighbor) tags, then
    rank the union of those tags' contexts by cosine to the fused query.
    """
    fused = fuse_query(query, embedder)
    return cope_search_embedded(fused, topk, memory, tree, personalization_limit)


def cope_search_embedded(fused, topk, memory, tree, personalization_limit=None) -> SearchResult:
    """cope_search for a pre-embedded query (benchmarks time this path)."""
    if topk < 1:
        raise ValidationError("topk must be >= 1")
    if memory.context_count == 0:
        raise EmptySearchError("search over an empty memory")
    if tree.tag_names != frozenset(memory.tag_names()):
        raise StaleIndexError("tree was built from a different tag set; rebuild it")
    if personalization_limit is None:
        personalization_limit = topk

    fused = as_embedding(fused)
    node = tree.node(tree.root)
    while not tree.is_leaf_parent(node):
        node = tree.get_top_child(node, fused)
    retrieved = tree.get_children_topk(node, fused, topk)
    return _finish(retrieved, fused, memory, personalization_limit)


def flat_cope_search(query, topk, memory, embedder, personalization_limit=None) -> SearchResult:
    """Same contract as cope_search with the descent replaced by a full tag scan."""
    fused = fuse_query(query, embedder)
    return flat_cope_search_embedded(fused, topk, memory, personalization_limit)


def flat_cope_search_embedded(fused, topk, memory, personalization_limit=None) -> SearchResult:
    if topk < 1:
        raise ValidationError("topk must be >= 1")
    if memory.context_count == 0:
        raise EmptySearchError("search over an empty memory")
    if personalization_limit is None:
        personalization_limit = topk

    fused = as_embedding(fused)
    retrieved = rank_tags(fused, memory)[: min(topk, memory.tag_count)]
    return _finish(retrieved, fused, memory, personalization_limit)


def rank_tags(fused, memory) -> list[str]:
    """Every tag name ordered by cosine(tag mean, query) desc, name asc."""
    names, matrix, norms = memory.tag_mean_matrix()
    q = as_embedding(fused)
    qn = float(np.linalg.norm(q))
    scores = np.zeros(len(names))
    if qn > 0.0:
        nz = norms > 0
        scores[nz] = (matrix[nz] @ q) / (norms[nz] * qn)
    order = np.lexsort((np.arange(len(names)), -scores))
    return [names[i] for i in order]


def _finish(retrieved, fused, memory, personalization_limit) -> SearchResult:
    extra = personalized_tags(retrieved, memory, personalization_limit)
    tags = list(retrieved) + [t for t in extra if t not in set(retrieved)]

    qn = float(np.linalg.norm(fused))
    scored: dict[str, float] = {}
    for tag in tags:
        ids, matrix = memory.tag_matrix(tag)
        if qn == 0.0:
            for cid in ids:
                scored.setdefault(cid, 0.0)
            continue
        norms = np.linalg.norm(matrix, axis=1)
        raw = matrix @ fused
        scores = np.zeros(len(ids))
        nz = norms > 0
        scores[nz] = raw[nz] / (norms[nz] * qn)
        np.clip(scores, -1.0, 1.0, out=scores)
        for cid, s in zip(ids, scores):
            scored.setdefault(cid, float(s))

    ordered = sorted(scored.items(), key=lambda item: (-item[1], item[0]))
    return SearchResult(tags=tuple(tags), contexts=tuple(ordered))
