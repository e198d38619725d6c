"""Flat key-value vector store: the sequential-scan baseline.

Deliberately index-free. Every search is one exact pass over all keys so
that latency comparisons against the concept-first engine stay honest.
Multi-reader/single-writer, same contract as the contextual store.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .embeddings import as_embedding, read_embedding_file
from .errors import DimensionError, DuplicateError, EmptySearchError, ValidationError


@dataclass(frozen=True)
class FlatRecord:
    id: str
    key_embedding: np.ndarray
    value: str
    payload: str | None = None


class FlatStore:
    def __init__(self, dim: int | None = None):
        if dim is not None and dim < 1:
            raise DimensionError("dim must be >= 1")
        self.dim = dim
        self._records: dict[str, FlatRecord] = {}
        self._lock = threading.RLock()
        self._matrix: tuple[list[str], np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self._records)

    def flat_insert(self, record: FlatRecord) -> str:
        emb = as_embedding(record.key_embedding)
        with self._lock:
            if self.dim is None:
                self.dim = emb.shape[0]
            if emb.shape[0] != self.dim:
                raise DimensionError(f"key dim {emb.shape[0]} != store dim {self.dim}")
            if record.id in self._records:
                raise DuplicateError(f"id {record.id!r} already stored")
            stored = FlatRecord(
                id=record.id,
                key_embedding=emb.astype(np.float32).astype(np.float64),
                value=record.value,
                payload=record.payload,
            )
            self._records[record.id] = stored
            self._matrix = None
            return record.id

    def insert(self, rec_id: str, key_embedding, value: str, payload: str | None = None) -> str:
        return self.flat_insert(FlatRecord(rec_id, as_embedding(key_embedding), value, payload))

    def bulk_load(self, path, labels=None) -> int:
        """Load every record of an embedding file; value = label or the id itself."""
        records = read_embedding_file(path)
        for rec_id, vec in records.items():
            value = labels[rec_id] if labels is not None else rec_id
            self.insert(rec_id, vec, value)
        return len(records)

    def consolidate(self) -> None:
        """Materialize the scan matrix now instead of on the first search."""
        self._consolidated()

    def _consolidated(self):
        with self._lock:
            if self._matrix is None:
                ids = sorted(self._records)
                matrix = (
                    np.stack([self._records[i].key_embedding for i in ids])
                    if ids
                    else np.zeros((0, self.dim or 1))
                )
                norms = np.linalg.norm(matrix, axis=1)
                self._matrix = (ids, matrix, norms)
            return self._matrix

    def flat_search(self, query, topk: int) -> list[tuple[str, str, float]]:
        """Exact top-k by cosine over every stored key: score desc, id asc."""
        if topk < 1:
            raise ValidationError("topk must be >= 1")
        if not self._records:
            raise EmptySearchError("search over an empty store")
        q = as_embedding(query)
        if q.shape[0] != self.dim:
            raise DimensionError(f"query dim {q.shape[0]} != store dim {self.dim}")
        ids, matrix, norms = self._consolidated()

        qn = float(np.linalg.norm(q))
        scores = np.zeros(len(ids))
        if qn > 0.0:
            nz = norms > 0
            scores[nz] = (matrix[nz] @ q) / (norms[nz] * qn)
            np.clip(scores, -1.0, 1.0, out=scores)

        k = min(topk, len(ids))
        if k < len(ids):
            # partial selection, then widen to cover boundary ties before ordering
            kth = np.partition(scores, len(ids) - k)[len(ids) - k]
            candidates = np.flatnonzero(scores >= kth)
        else:
            candidates = np.arange(len(ids))
        order = np.lexsort((candidates, -scores[candidates]))
        picked = candidates[order][:k]
        return [(ids[i], self._records[ids[i]].value, float(scores[i])) for i in picked]
