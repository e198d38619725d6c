"""Embedding arithmetic, deterministic synthetic embeddings, and the embedding file format.

Embeddings are 1-D numpy arrays. All similarity math runs in float64;
the on-disk format stores float32 (see ``write_embedding_file``).
"""

from __future__ import annotations

import hashlib
import struct
from functools import lru_cache
from typing import Iterable, Mapping, Protocol, runtime_checkable

import numpy as np

from .errors import DimensionError, EmptyInputError, FormatError, NotFoundError

MAGIC = b"CPME"
FORMAT_VERSION = 1

MODALITIES = ("text", "image", "audio", "video")


def as_embedding(values) -> np.ndarray:
    """Coerce to a 1-D float64 vector, rejecting empty or non-finite input."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError(f"embedding must be a 1-D vector with dim >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding contains NaN or Inf")
    return arr


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Zero-norm vectors score 0 by convention so degenerate entries rank
    last instead of aborting a search.
    """
    a = as_embedding(a)
    b = as_embedding(b)
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"dim mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    score = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, score))


def mean_embedding(items: Iterable) -> np.ndarray:
    """Component-wise arithmetic mean of a nonempty list of same-dim vectors."""
    vecs = [as_embedding(v) for v in items]
    if not vecs:
        raise EmptyInputError("mean_embedding of an empty list")
    dim = vecs[0].shape[0]
    for v in vecs[1:]:
        if v.shape[0] != dim:
            raise DimensionError(f"dim mismatch: {dim} vs {v.shape[0]}")
    return np.mean(np.stack(vecs), axis=0)


@lru_cache(maxsize=8192)
def _centroid_cached(seed: int, class_id: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng([int(seed), int(class_id)])
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def class_centroid(seed: int, class_id: int, dim: int) -> np.ndarray:
    """Pseudo-random unit vector fully determined by (seed, class_id, dim)."""
    if dim < 1:
        raise DimensionError("dim must be >= 1")
    return _centroid_cached(seed, class_id, dim).copy()


def synthetic_embed(seed: int, class_id: int, noise_scale: float, dim: int, draw: int = 0) -> np.ndarray:
    """Deterministic stand-in for a real embedding model.

    Returns the class centroid plus ``noise_scale`` times a gaussian draw
    keyed by (seed, draw), so two calls with distinct ``draw`` indices get
    independent noise while staying reproducible across process restarts.
    """
    if dim < 1:
        raise DimensionError("dim must be >= 1")
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    centroid = _centroid_cached(seed, class_id, dim)
    if noise_scale == 0:
        return centroid.copy()
    rng = np.random.default_rng([int(seed), 0x5EED, int(draw)])
    return centroid + noise_scale * rng.standard_normal(dim)


@runtime_checkable
class Embedder(Protocol):
    """Anything that maps (content, modality) to a fixed-dim vector.

    Implementations must be deterministic: identical (content, modality)
    yields an identical vector within one instance. Thread-unsafe
    implementations should say so; the engine serializes calls to them.
    """

    dim: int

    def embed(self, content: str, modality: str) -> np.ndarray: ...


class HashEmbedder:
    """Deterministic content-hash embedder for tests, demos, and the CLI.

    Embeds (modality, content) by seeding a generator from their SHA-256,
    so the same input maps to the same unit vector in every process.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise DimensionError("dim must be >= 1")
        self.dim = dim

    def embed(self, content: str, modality: str) -> np.ndarray:
        digest = hashlib.sha256(f"{modality}\x00{content}".encode("utf-8")).digest()
        seed = np.frombuffer(digest, dtype=np.uint64)
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)


class LookupEmbedder:
    """Embedder backed by a precomputed content -> vector table.

    Used by the benchmark harness so query embedding cost is a dict get
    and never pollutes search latency.
    """

    def __init__(self, dim: int, table: Mapping[str, np.ndarray]):
        self.dim = dim
        self._table = {k: as_embedding(v) for k, v in table.items()}
        for k, v in self._table.items():
            if v.shape[0] != dim:
                raise DimensionError(f"entry {k!r} has dim {v.shape[0]}, expected {dim}")

    def embed(self, content: str, modality: str) -> np.ndarray:
        try:
            return self._table[content]
        except KeyError:
            raise NotFoundError(f"no precomputed embedding for {content!r}") from None


def encode_embeddings(records: Mapping[str, np.ndarray], dim: int | None = None) -> bytes:
    """Serialize id -> vector records in the binary embedding format.

    Layout (little-endian): magic "CPME", u16 version, u32 dim, u64 count,
    then per record a u16 id length, the UTF-8 id bytes, and dim float32s.
    An explicit ``dim`` is required when ``records`` is empty.
    """
    items = list(records.items())
    if dim is None:
        if not items:
            raise EmptyInputError("dim is required to encode an empty record set")
        dim = as_embedding(items[0][1]).shape[0]
    chunks = [MAGIC, struct.pack("<HIQ", FORMAT_VERSION, dim, len(items))]
    for rec_id, vec in items:
        vec = as_embedding(vec)
        if vec.shape[0] != dim:
            raise DimensionError(f"record {rec_id!r} has dim {vec.shape[0]}, expected {dim}")
        id_bytes = rec_id.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise FormatError(f"record id too long ({len(id_bytes)} bytes)")
        chunks.append(struct.pack("<H", len(id_bytes)))
        chunks.append(id_bytes)
        chunks.append(vec.astype(np.float32).tobytes())
    return b"".join(chunks)


def write_embedding_file(path, records: Mapping[str, np.ndarray], dim: int | None = None) -> None:
    """Write records to ``path`` in the binary embedding format."""
    payload = encode_embeddings(records, dim=dim)
    with open(path, "wb") as fh:
        fh.write(payload)


def decode_embeddings(data: bytes) -> dict[str, np.ndarray]:
    """Parse the binary embedding format back into an ordered id -> vector dict.

    Rejects unknown versions, truncated records, dim mismatches, duplicate
    ids, and trailing bytes; FormatError.record names the offending record.
    """
    header_size = len(MAGIC) + struct.calcsize("<HIQ")
    if len(data) < header_size or data[: len(MAGIC)] != MAGIC:
        raise FormatError("not an embedding file (bad magic or truncated header)")
    version, dim, count = struct.unpack_from("<HIQ", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported embedding file version {version}")
    if dim < 1:
        raise FormatError(f"header dim must be >= 1, got {dim}")

    out: dict[str, np.ndarray] = {}
    offset = header_size
    vec_bytes = 4 * dim
    for i in range(count):
        if offset + 2 > len(data):
            raise FormatError(f"truncated id length at record {i}", record=i)
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len > len(data):
            raise FormatError(f"truncated id at record {i}", record=i)
        try:
            rec_id = data[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"record id is not valid UTF-8 at record {i}", record=i) from None
        offset += id_len
        if offset + vec_bytes > len(data):
            raise FormatError(f"record {i} has fewer than {dim} values", record=i)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += vec_bytes
        if rec_id in out:
            raise FormatError(f"duplicate id {rec_id!r} at record {i}", record=i)
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"non-finite value in record {i}", record=i)
        out[rec_id] = vec
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after {count} records")
    return out


def read_embedding_file(path) -> dict[str, np.ndarray]:
    """Read a binary embedding file; see ``decode_embeddings`` for validation."""
    with open(path, "rb") as fh:
        return decode_embeddings(fh.read())
