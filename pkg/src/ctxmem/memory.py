"""Graph-structured multimodal context store.

Context nodes hold one conversation snapshot each (content, optional media
URI, tags, modality, timestamp, embedding). Tag nodes abstract concepts;
two tags are connected exactly when they share at least one context node,
and the edge weight is the exact shared-context count. Tag nodes carry a
running mean of their members' embeddings.

Embeddings are quantized to float32 on insert (the storage precision) and
upcast to float64 for all math, which makes snapshot round trips lossless.

Concurrency contract: many readers or one writer. Mutators and readers
that walk shared structures take the instance lock; callers serialize
writers externally.
"""

from __future__ import annotations

import json
import threading
import zipfile
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterator

import numpy as np

from .embeddings import MODALITIES, as_embedding, decode_embeddings, encode_embeddings
from .errors import (
    DimensionError,
    FormatError,
    ModalityError,
    NotFoundError,
    ValidationError,
)

SNAPSHOT_FORMAT = "ctxmem-snapshot"
SNAPSHOT_VERSION = 1


def utc_second(ts: datetime) -> datetime:
    """Normalize a timestamp to tz-aware UTC at whole-second precision."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


@dataclass(frozen=True)
class ContextNode:
    id: str
    content: str
    uri: str | None
    tags: tuple[str, ...]
    modality: str
    timestamp: datetime
    embedding: np.ndarray  # float32-quantized storage value


@dataclass(frozen=True)
class TagNode:
    """Read-only snapshot of one tag: its members and derived mean embedding."""

    name: str
    context_ids: frozenset[str]
    mean_embedding: np.ndarray


class _TagState:
    __slots__ = ("context_ids", "vec_sum")

    def __init__(self, dim: int):
        self.context_ids: set[str] = set()
        self.vec_sum = np.zeros(dim, dtype=np.float64)

    def mean(self) -> np.ndarray:
        return self.vec_sum / len(self.context_ids)


def _validate_tags(tags) -> tuple[str, ...]:
    if tags is None:
        raise ValidationError("tags must be a nonempty list of names")
    deduped: list[str] = []
    seen = set()
    for t in tags:
        if not isinstance(t, str) or not t:
            raise ValidationError("tag names must be nonempty strings")
        if t not in seen:
            seen.add(t)
            deduped.append(t)
    if not deduped:
        raise ValidationError("tags must be a nonempty list of names")
    return tuple(deduped)


def _validate_modality(modality: str, uri: str | None) -> None:
    if modality not in MODALITIES:
        raise ModalityError(f"unknown modality {modality!r}, expected one of {MODALITIES}")
    if modality == "text" and uri is not None:
        raise ModalityError("text modality must not carry a uri")
    if modality != "text" and uri is None:
        raise ModalityError(f"{modality} modality requires a uri")


class ContextualMemory:
    """The tag-graph + context-node store.

    One instance holds embeddings of a single dimension, fixed either in
    the constructor or by the first insert.
    """

    def __init__(self, dim: int | None = None):
        if dim is not None and dim < 1:
            raise DimensionError("dim must be >= 1")
        self.dim = dim
        self._contexts: dict[str, ContextNode] = {}
        self._tags: dict[str, _TagState] = {}
        self._edges: dict[tuple[str, str], int] = {}
        self._next_id = 0
        self._lock = threading.RLock()
        # lazy per-tag (ids, matrix) and all-tag mean matrix caches for search
        self._tag_matrix_cache: dict[str, tuple[tuple[str, ...], np.ndarray]] = {}
        self._tag_mean_cache: tuple[tuple[str, ...], np.ndarray, np.ndarray] | None = None

    # ------------------------------------------------------------------ write

    def insert_context(
        self,
        content: str,
        tags,
        modality: str,
        uri: str | None,
        timestamp: datetime,
        embedding,
    ) -> str:
        """Store one context node and maintain tag nodes, means, and edges.

        Returns the new node id. Tag names are deduplicated; an edge is
        created or its shared count incremented for every pair of tags on
        the node.
        """
        _validate_modality(modality, uri)
        tag_tuple = _validate_tags(tags)
        emb = as_embedding(embedding)
        with self._lock:
            if self.dim is None:
                self.dim = emb.shape[0]
            if emb.shape[0] != self.dim:
                raise DimensionError(f"embedding dim {emb.shape[0]} != memory dim {self.dim}")
            stored = emb.astype(np.float32).astype(np.float64)

            node_id = f"ctx-{self._next_id:08d}"
            self._next_id += 1
            node = ContextNode(
                id=node_id,
                content=content,
                uri=uri,
                tags=tag_tuple,
                modality=modality,
                timestamp=utc_second(timestamp),
                embedding=stored,
            )
            self._attach(node)
            return node_id

    def _attach(self, node: ContextNode) -> None:
        if node.id in self._contexts:
            raise FormatError(f"duplicate context id {node.id!r}")
        self._contexts[node.id] = node
        for name in node.tags:
            state = self._tags.get(name)
            if state is None:
                state = _TagState(self.dim)
                self._tags[name] = state
            state.context_ids.add(node.id)
            state.vec_sum += node.embedding
            self._tag_matrix_cache.pop(name, None)
        for a, b in _pairs(node.tags):
            key = (a, b) if a < b else (b, a)
            self._edges[key] = self._edges.get(key, 0) + 1
        self._tag_mean_cache = None

    def remove_context(self, node_id: str) -> ContextNode:
        """Delete a node, shrinking tags and edges; empty tags disappear."""
        with self._lock:
            node = self._contexts.pop(node_id, None)
            if node is None:
                raise NotFoundError(f"no context {node_id!r}")
            for name in node.tags:
                state = self._tags[name]
                state.context_ids.discard(node_id)
                state.vec_sum -= node.embedding
                self._tag_matrix_cache.pop(name, None)
                if not state.context_ids:
                    del self._tags[name]
            for a, b in _pairs(node.tags):
                key = (a, b) if a < b else (b, a)
                remaining = self._edges[key] - 1
                if remaining:
                    self._edges[key] = remaining
                else:
                    del self._edges[key]
            self._tag_mean_cache = None
            return node

    def rebuild_tag_means(self) -> None:
        """Recompute every tag's running sum from the raw context embeddings."""
        with self._lock:
            for name, state in self._tags.items():
                fresh = np.zeros(self.dim, dtype=np.float64)
                for cid in sorted(state.context_ids):
                    fresh += self._contexts[cid].embedding
                state.vec_sum = fresh
            self._tag_mean_cache = None

    # ------------------------------------------------------------------- read

    def get_context(self, node_id: str) -> ContextNode:
        node = self._contexts.get(node_id)
        if node is None:
            raise NotFoundError(f"no context {node_id!r}")
        return node

    def get_tag(self, name: str) -> TagNode:
        """Tag names are case-sensitive, compared by exact equality."""
        with self._lock:
            state = self._tags.get(name)
            if state is None:
                raise NotFoundError(f"no tag {name!r}")
            return TagNode(
                name=name,
                context_ids=frozenset(state.context_ids),
                mean_embedding=state.mean(),
            )

    def has_tag(self, name: str) -> bool:
        return name in self._tags

    def neighbors(self, tag_name: str) -> list[tuple[str, int]]:
        """Edges incident to a tag, sorted by shared count desc then name asc."""
        with self._lock:
            if tag_name not in self._tags:
                raise NotFoundError(f"no tag {tag_name!r}")
            found = []
            for (a, b), count in self._edges.items():
                if a == tag_name:
                    found.append((b, count))
                elif b == tag_name:
                    found.append((a, count))
            found.sort(key=lambda pair: (-pair[1], pair[0]))
            return found

    def tag_names(self) -> list[str]:
        with self._lock:
            return sorted(self._tags)

    def edges(self) -> list[tuple[str, str, int]]:
        with self._lock:
            return sorted((a, b, n) for (a, b), n in self._edges.items())

    def context_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._contexts)

    def contexts(self) -> Iterator[ContextNode]:
        with self._lock:
            snapshot = list(self._contexts.values())
        return iter(snapshot)

    @property
    def context_count(self) -> int:
        return len(self._contexts)

    @property
    def tag_count(self) -> int:
        return len(self._tags)

    def __len__(self) -> int:
        return len(self._contexts)

    # ------------------------------------------------- vectorized search views

    def tag_matrix(self, name: str) -> tuple[tuple[str, ...], np.ndarray]:
        """(sorted member ids, stacked float64 embeddings) for one tag, cached."""
        with self._lock:
            cached = self._tag_matrix_cache.get(name)
            if cached is not None:
                return cached
            state = self._tags.get(name)
            if state is None:
                raise NotFoundError(f"no tag {name!r}")
            ids = tuple(sorted(state.context_ids))
            matrix = np.stack([self._contexts[cid].embedding for cid in ids])
            self._tag_matrix_cache[name] = (ids, matrix)
            return ids, matrix

    def tag_mean_matrix(self) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
        """(sorted tag names, stacked means, row norms), cached until mutation."""
        with self._lock:
            if self._tag_mean_cache is None:
                names = tuple(sorted(self._tags))
                if names:
                    matrix = np.stack([self._tags[n].mean() for n in names])
                    norms = np.linalg.norm(matrix, axis=1)
                else:
                    matrix = np.zeros((0, self.dim or 1))
                    norms = np.zeros(0)
                self._tag_mean_cache = (names, matrix, norms)
            return self._tag_mean_cache

    # ------------------------------------------------------------- persistence

    def save_snapshot(self, path) -> None:
        """Write the whole store as a zip of graph.json + an embedding block."""
        with self._lock:
            graph = {
                "format": SNAPSHOT_FORMAT,
                "version": SNAPSHOT_VERSION,
                "dim": self.dim,
                "next_id": self._next_id,
                "contexts": [
                    {
                        "id": node.id,
                        "content": node.content,
                        "uri": node.uri,
                        "tags": list(node.tags),
                        "modality": node.modality,
                        "timestamp": node.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
                    }
                    for node in (self._contexts[cid] for cid in sorted(self._contexts))
                ],
                "tags": [
                    {"name": name, "context_ids": sorted(state.context_ids)}
                    for name, state in sorted(self._tags.items())
                ],
                "edges": [
                    {"a": a, "b": b, "shared_count": n}
                    for (a, b), n in sorted(self._edges.items())
                ],
            }
            embeddings = {cid: self._contexts[cid].embedding for cid in sorted(self._contexts)}
            with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
                zf.writestr("graph.json", json.dumps(graph, indent=1, sort_keys=True))
                zf.writestr("embeddings.cpme", encode_embeddings(embeddings, dim=self.dim or 1))

    @classmethod
    def load_snapshot(cls, path) -> "ContextualMemory":
        """Rebuild a memory from a snapshot, verifying graph consistency."""
        try:
            with zipfile.ZipFile(path) as zf:
                with zf.open("graph.json") as fh:
                    graph = json.load(fh)
                with zf.open("embeddings.cpme") as fh:
                    raw = fh.read()
        except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as exc:
            raise FormatError(f"unreadable snapshot: {exc}") from exc

        if graph.get("format") != SNAPSHOT_FORMAT:
            raise FormatError("not a memory snapshot")
        if graph.get("version") != SNAPSHOT_VERSION:
            raise FormatError(f"unsupported snapshot version {graph.get('version')!r}")

        embeddings = decode_embeddings(raw)

        mem = cls(dim=graph.get("dim"))
        try:
            for rec in graph["contexts"]:
                emb = embeddings[rec["id"]]
                if mem.dim is None:
                    mem.dim = emb.shape[0]
                if emb.shape[0] != mem.dim:
                    raise FormatError(f"embedding dim mismatch for {rec['id']!r}")
                ts = datetime.strptime(rec["timestamp"], "%Y-%m-%dT%H:%M:%SZ").replace(
                    tzinfo=timezone.utc
                )
                _validate_modality(rec["modality"], rec["uri"])
                node = ContextNode(
                    id=rec["id"],
                    content=rec["content"],
                    uri=rec["uri"],
                    tags=_validate_tags(rec["tags"]),
                    modality=rec["modality"],
                    timestamp=ts,
                    embedding=emb.astype(np.float32).astype(np.float64),
                )
                mem._attach(node)
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"snapshot graph/embedding mismatch: {exc}") from exc
        if len(embeddings) != len(mem._contexts):
            raise FormatError("embedding block holds records absent from the graph")
        mem._next_id = graph.get("next_id", len(mem._contexts))

        saved_tags = {t["name"]: set(t["context_ids"]) for t in graph["tags"]}
        live_tags = {name: set(state.context_ids) for name, state in mem._tags.items()}
        if saved_tags != live_tags:
            raise FormatError("snapshot tag table disagrees with context records")
        saved_edges = {(e["a"], e["b"]): e["shared_count"] for e in graph["edges"]}
        if saved_edges != mem._edges:
            raise FormatError("snapshot edge table disagrees with context records")
        return mem


def _pairs(names: tuple[str, ...]):
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            yield names[i], names[j]
