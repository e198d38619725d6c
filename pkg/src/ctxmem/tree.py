"""Immutable cluster hierarchy over tag embeddings for concept-first descent.

Build flow: take every tag's mean embedding, reduce dimensionality (default
exact PCA), then cluster level by level (default average-linkage cut at
ceil(sqrt(n)) clusters) until a single root remains. Reduction and
clustering only decide the grouping; every stored centroid (leaf and
internal) lives in the original embedding space so queries can be compared
by cosine during descent. Internal centroids are means over descendant
leaf centroids.

Trees are immutable after build and safe for unrestricted concurrent reads.
A rebuild is always explicit; search raises StaleIndexError instead of
rebuilding behind the caller's back.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .embeddings import as_embedding
from .errors import EmptyInputError, InvalidNodeError, NotFoundError, ValidationError


@dataclass(frozen=True)
class TreeNode:
    id: int
    centroid: np.ndarray
    children: tuple[int, ...]  # empty iff leaf
    tag_name: str | None  # present iff leaf


class Reducer(Protocol):
    def reduce(self, embeddings: Sequence[np.ndarray], target_dim: int) -> list[np.ndarray]: ...


class Clusterer(Protocol):
    def cluster(self, points: Sequence[np.ndarray]) -> list[list[int]]: ...


class PCAReducer:
    """Exact principal-component reduction with a fixed sign convention.

    Centers the data, projects onto the top ``target_dim`` right-singular
    directions, and flips each direction so its largest-magnitude entry is
    positive. Pads with zero columns when the data rank is below
    ``target_dim``, keeping the output dim exact.
    """

    def reduce(self, embeddings, target_dim: int) -> list[np.ndarray]:
        if target_dim < 1:
            raise ValidationError("target_dim must be >= 1")
        X = np.stack([as_embedding(e) for e in embeddings])
        n = X.shape[0]
        Xc = X - X.mean(axis=0)
        _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
        k = min(target_dim, Vt.shape[0])
        comps = Vt[:k].copy()
        for i in range(k):
            j = int(np.argmax(np.abs(comps[i])))
            if comps[i, j] < 0:
                comps[i] = -comps[i]
        reduced = Xc @ comps.T
        if k < target_dim:
            reduced = np.hstack([reduced, np.zeros((n, target_dim - k))])
        return [reduced[i] for i in range(n)]


class AverageLinkageClusterer:
    """Average-linkage agglomerative clustering cut at ceil(sqrt(n)) clusters.

    Deterministic given identical input. Clusters come back ordered by
    their smallest member index.
    """

    def cluster(self, points) -> list[list[int]]:
        n = len(points)
        if n == 0:
            raise EmptyInputError("no points to cluster")
        if n == 1:
            return [[0]]
        X = np.stack([as_embedding(p) for p in points])
        k = math.ceil(math.sqrt(n))
        Z = linkage(X, method="average")
        labels = fcluster(Z, t=k, criterion="maxclust")
        groups: dict[int, list[int]] = defaultdict(list)
        for idx, lab in enumerate(labels):
            groups[int(lab)].append(idx)
        return [groups[lab] for lab in sorted(groups, key=lambda lab: min(groups[lab]))]


class ContextualTree:
    """Read-only hierarchy; construct via :func:`build_tree`."""

    def __init__(self, nodes, root, built_from, level_sizes, tag_names, dim):
        self.nodes: dict[int, TreeNode] = nodes
        self.root: int = root
        self.built_from: int = built_from
        self.level_sizes: list[int] = level_sizes
        self.tag_names: frozenset[str] = frozenset(tag_names)
        self.dim: int = dim
        # per-internal-node stacked child centroids for vectorized descent
        self._child_scores: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for node in nodes.values():
            if node.children:
                matrix = np.stack([nodes[c].centroid for c in node.children])
                self._child_scores[node.id] = (matrix, np.linalg.norm(matrix, axis=1))

    def node(self, node_id: int) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise NotFoundError(f"no tree node {node_id}") from None

    def _resolve(self, node) -> TreeNode:
        return node if isinstance(node, TreeNode) else self.node(node)

    def is_leaf_parent(self, node) -> bool:
        """True iff the node has children and every child is a leaf."""
        node = self._resolve(node)
        return bool(node.children) and all(
            self.nodes[c].tag_name is not None for c in node.children
        )

    def _scores(self, node: TreeNode, query: np.ndarray) -> np.ndarray:
        matrix, norms = self._child_scores[node.id]
        q = as_embedding(query)
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            return np.zeros(len(node.children))
        raw = matrix @ q
        scores = np.zeros(len(node.children))
        nz = norms > 0
        scores[nz] = raw[nz] / (norms[nz] * qn)
        return np.clip(scores, -1.0, 1.0)

    def get_top_child(self, node, query) -> TreeNode:
        """Child with the highest cosine to the query; ties go to the lower id."""
        node = self._resolve(node)
        if not node.children:
            raise InvalidNodeError(f"node {node.id} is a leaf")
        scores = self._scores(node, query)
        # children are stored id-ascending, so argmax's first-hit rule == lower id
        return self.nodes[node.children[int(np.argmax(scores))]]

    def get_children_topk(self, node, query, topk: int) -> list[str]:
        """Top-k leaf tags under a leaf-parent, by cosine desc then name asc."""
        if topk < 1:
            raise ValidationError("topk must be >= 1")
        node = self._resolve(node)
        if not self.is_leaf_parent(node):
            raise InvalidNodeError(f"node {node.id} is not a leaf-parent")
        scores = self._scores(node, query)
        # leaf ids follow name order, so position breaks ties by name
        order = np.lexsort((np.arange(len(scores)), -scores))
        picked = order[: min(topk, len(scores))]
        return [self.nodes[node.children[i]].tag_name for i in picked]

    def leaves(self) -> list[TreeNode]:
        return [self.nodes[i] for i in sorted(self.nodes) if self.nodes[i].tag_name is not None]

    def parent_of(self, node_id: int) -> int | None:
        for node in self.nodes.values():
            if node_id in node.children:
                return node.id
        return None

    def to_json(self) -> str:
        parents: dict[int, int | None] = {self.root: None}
        for node in self.nodes.values():
            for child in node.children:
                parents[child] = node.id
        payload = {
            "version": 1,
            "built_from": self.built_from,
            "level_sizes": self.level_sizes,
            "nodes": [
                {
                    "id": node.id,
                    "parent": parents.get(node.id),
                    "tag_name": node.tag_name,
                    "centroid": [float(x) for x in node.centroid],
                }
                for node in (self.nodes[i] for i in sorted(self.nodes))
            ],
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


def default_target_dim(dim: int) -> int:
    return min(16, dim)


def build_tree(memory, reducer=None, clusterer=None, target_dim: int | None = None) -> ContextualTree:
    """Build the tag hierarchy for a memory's current tag set.

    Leaves (one per tag, id-ordered by tag name) carry the tag mean
    embeddings; internal levels come from iterating the clusterer over
    reduced vectors until one cluster remains. With 1 or 2 tags the root
    directly parents the leaves and clustering is skipped. If a clusterer
    refuses to merge (returns n clusters for n points), the two closest
    clusters are merged to guarantee a single root.
    """
    names, means, _ = memory.tag_mean_matrix()
    n = len(names)
    if n == 0:
        raise EmptyInputError("cannot build a tree over an empty tag graph")
    dim = means.shape[1]
    if target_dim is None:
        target_dim = default_target_dim(dim)
    reducer = reducer if reducer is not None else PCAReducer()
    clusterer = clusterer if clusterer is not None else AverageLinkageClusterer()

    nodes: dict[int, TreeNode] = {}
    for i, name in enumerate(names):
        nodes[i] = TreeNode(id=i, centroid=means[i].copy(), children=(), tag_name=name)

    next_id = n
    if n <= 2:
        root = TreeNode(
            id=next_id,
            centroid=means.mean(axis=0),
            children=tuple(range(n)),
            tag_name=None,
        )
        nodes[next_id] = root
        level_sizes = [1] if n == 1 else [1, 2]
        return ContextualTree(nodes, root.id, n, level_sizes, names, dim)

    reduced = np.stack(reducer.reduce([means[i] for i in range(n)], target_dim))

    # per level: node ids, their descendant-leaf index lists, reduced centroids
    level_ids = list(range(n))
    level_members: list[list[int]] = [[i] for i in range(n)]
    level_points = reduced
    level_sizes = [n]

    while len(level_ids) > 1:
        partition = clusterer.cluster([level_points[i] for i in range(len(level_ids))])
        _check_partition(partition, len(level_ids))
        partition = [sorted(group) for group in partition]
        partition.sort(key=lambda group: group[0])
        if len(partition) == len(level_ids):
            partition = _force_merge(partition, level_points)

        new_ids: list[int] = []
        new_members: list[list[int]] = []
        new_points = np.zeros((len(partition), level_points.shape[1]))
        for gi, group in enumerate(partition):
            members = sorted(idx for entry in group for idx in level_members[entry])
            children = tuple(sorted(level_ids[entry] for entry in group))
            centroid = means[members].mean(axis=0)
            node = TreeNode(id=next_id, centroid=centroid, children=children, tag_name=None)
            nodes[next_id] = node
            new_ids.append(next_id)
            new_members.append(members)
            new_points[gi] = reduced[members].mean(axis=0)
            next_id += 1

        level_ids, level_members, level_points = new_ids, new_members, new_points
        level_sizes.append(len(level_ids))

    level_sizes.reverse()
    return ContextualTree(nodes, level_ids[0], n, level_sizes, names, dim)


def _check_partition(partition, size: int) -> None:
    if not partition:
        raise ValidationError("clusterer returned no clusters")
    seen: set[int] = set()
    total = 0
    for group in partition:
        if not group:
            raise ValidationError("clusterer returned an empty cluster")
        seen.update(group)
        total += len(group)
    if total != size or seen != set(range(size)):
        raise ValidationError("clusterer partition must cover every index exactly once")


def _force_merge(partition: list[list[int]], points: np.ndarray) -> list[list[int]]:
    """Merge the two closest clusters (by reduced-space centroid distance)."""
    centroids = np.stack([points[group].mean(axis=0) for group in partition])
    best = None
    best_dist = math.inf
    for i in range(len(partition)):
        for j in range(i + 1, len(partition)):
            dist = float(np.linalg.norm(centroids[i] - centroids[j]))
            if dist < best_dist:
                best_dist = dist
                best = (i, j)
    i, j = best
    merged = sorted(partition[i] + partition[j])
    out = [grp for k, grp in enumerate(partition) if k not in (i, j)]
    out.append(merged)
    out.sort(key=lambda group: group[0])
    return out
