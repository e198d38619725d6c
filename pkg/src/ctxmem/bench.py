"""Dataset generation, embedding import, and the retrieval benchmark grid.

The synthetic layout mirrors a labeled-retrieval task: one tag per class,
``train_per_class`` contexts per tag, and queries drawn from the same
class centroids with the same noise. Everything expands deterministically
from the spec seed, so two runs produce byte-identical datasets.

``run_bench`` compares three methods over the exact same pre-embedded
queries in the same order: concept search with the tree (cope_clustered),
concept search scanning all tag means (cope_flat), and the flat key-value
scan (rag_flat). Per-query wall time uses a monotonic clock, measured
single-threaded after a warmup pass, and never includes query embedding or
index builds (build_time is reported separately).
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .baseline import FlatStore
from .embeddings import read_embedding_file, synthetic_embed, write_embedding_file
from .errors import FormatError, StaleIndexError, ValidationError
from .memory import ContextualMemory
from .metrics import topk_accuracy
from .search import cope_search_embedded, flat_cope_search_embedded
from .tree import build_tree

EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)
METHODS = ("cope_clustered", "cope_flat", "rag_flat")
DATASET_FORMAT = "ctxmem-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    classes: int
    train_per_class: int
    queries_per_class: int
    dim: int = 64
    noise_scale: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("classes", "train_per_class", "queries_per_class", "dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be nonnegative")


@dataclass(frozen=True)
class ContextRecord:
    id: str
    content: str
    tags: tuple[str, ...]
    modality: str
    uri: str | None
    timestamp: datetime
    embedding: np.ndarray


@dataclass(frozen=True)
class QueryRecord:
    qid: str
    embedding: np.ndarray
    gold: str


@dataclass(frozen=True)
class SyntheticDataset:
    spec: SyntheticDatasetSpec
    contexts: list[ContextRecord]
    queries: list[QueryRecord]


def class_tag(class_id: int) -> str:
    return f"class-{class_id:04d}"


def gen_synthetic(spec: SyntheticDatasetSpec) -> SyntheticDataset:
    """Expand a spec into fill contexts and gold-labeled queries.

    Context j of class c uses noise draw c*train_per_class + j; queries
    continue the draw sequence after all contexts, so no two embeddings
    share noise and the whole dataset is a pure function of the seed.
    """
    contexts: list[ContextRecord] = []
    queries: list[QueryRecord] = []
    tick = 0
    for c in range(spec.classes):
        for j in range(spec.train_per_class):
            draw = c * spec.train_per_class + j
            emb = synthetic_embed(spec.seed, c, spec.noise_scale, spec.dim, draw=draw)
            rec_id = f"rec-{draw:08d}"
            contexts.append(
                ContextRecord(
                    id=rec_id,
                    content=f"sample {j} of {class_tag(c)}",
                    tags=(class_tag(c),),
                    modality="text",
                    uri=None,
                    timestamp=EPOCH + timedelta(seconds=tick),
                    embedding=emb,
                )
            )
            tick += 1
    query_base = spec.classes * spec.train_per_class
    for c in range(spec.classes):
        for j in range(spec.queries_per_class):
            draw = query_base + c * spec.queries_per_class + j
            emb = synthetic_embed(spec.seed, c, spec.noise_scale, spec.dim, draw=draw)
            queries.append(
                QueryRecord(qid=f"query-{draw:08d}", embedding=emb, gold=class_tag(c))
            )
    return SyntheticDataset(spec=spec, contexts=contexts, queries=queries)


def populate_memory(memory: ContextualMemory, contexts) -> None:
    for rec in contexts:
        memory.insert_context(
            content=rec.content,
            tags=list(rec.tags),
            modality=rec.modality,
            uri=rec.uri,
            timestamp=rec.timestamp,
            embedding=rec.embedding,
        )


def populate_flat(store: FlatStore, contexts) -> None:
    for rec in contexts:
        store.insert(rec.id, rec.embedding, rec.tags[0], payload=rec.content)


# ------------------------------------------------------------------ reporting


@dataclass(frozen=True)
class BenchReport:
    method: str
    memory_size: int
    top1: float
    top5: float
    median_latency_ms: float
    p95_latency_ms: float
    build_time_ms: float

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if self.top1 > self.top5 + 1e-12:
            raise ValidationError("top1 cannot exceed top5")
        if self.median_latency_ms <= 0 or self.p95_latency_ms <= 0:
            raise ValidationError("latencies must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def write_reports(path, reports) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(report.to_json() + "\n")


def read_reports(path) -> list[BenchReport]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(BenchReport(**json.loads(line)))
    return out


_TABLE_COLUMNS = ("method", "contexts", "top-1", "top-5", "median ms", "p95 ms", "build ms")


def format_report_table(reports, redact_timings: bool = False) -> str:
    """Fixed-width report table; ``redact_timings`` masks machine-dependent cells."""
    rows = [_TABLE_COLUMNS]
    for r in reports:
        timing = (
            ("-", "-", "-")
            if redact_timings
            else (
                f"{r.median_latency_ms:.3f}",
                f"{r.p95_latency_ms:.3f}",
                f"{r.build_time_ms:.1f}",
            )
        )
        rows.append(
            (r.method, str(r.memory_size), f"{r.top1:.4f}", f"{r.top5:.4f}") + timing
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(_TABLE_COLUMNS))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(row))).rstrip())
    return "\n".join(lines)


# ------------------------------------------------------------------ benchmark


def run_bench(
    dataset: SyntheticDataset,
    methods=METHODS,
    topk: int = 5,
    warmup: int = 100,
    rag_scan_depth: int | None = None,
) -> list[BenchReport]:
    """Score and time each method over the dataset's queries.

    Every method sees the exact same query embeddings in the same order.
    Accuracy uses the first ``topk`` ranked labels; the flat key-value
    baseline scans ``rag_scan_depth`` (default 10*topk) records deep and
    deduplicates labels in rank order to produce a label ranking.
    """
    for method in methods:
        if method not in METHODS:
            raise ValidationError(f"unknown method {method!r}")
    if rag_scan_depth is None:
        rag_scan_depth = 10 * topk

    queries = dataset.queries
    gold = [q.gold for q in queries]
    reports: list[BenchReport] = []

    memory: ContextualMemory | None = None
    memory_fill_ms = 0.0
    tree = None
    tree_ms = 0.0

    def need_memory():
        nonlocal memory, memory_fill_ms
        if memory is None:
            start = time.perf_counter()
            memory = ContextualMemory(dim=dataset.spec.dim)
            populate_memory(memory, dataset.contexts)
            memory.tag_mean_matrix()  # warm the scan cache outside the timed region
            memory_fill_ms = (time.perf_counter() - start) * 1000.0
        return memory

    def need_tree():
        nonlocal tree, tree_ms
        mem = need_memory()
        if tree is None:
            start = time.perf_counter()
            tree = build_tree(mem)
            tree_ms = (time.perf_counter() - start) * 1000.0
        if tree.tag_names != frozenset(mem.tag_names()):
            raise StaleIndexError("benchmark tree is stale; memory changed after build")
        return tree

    for method in methods:
        if method == "cope_clustered":
            mem = need_memory()
            t = need_tree()

            def run_query(q):
                result = cope_search_embedded(q, topk, mem, t)
                return result.tags[:topk]

            build_ms = memory_fill_ms + tree_ms
            size = mem.context_count
        elif method == "cope_flat":
            mem = need_memory()

            def run_query(q):
                result = flat_cope_search_embedded(q, topk, mem)
                return result.tags[:topk]

            build_ms = memory_fill_ms
            size = mem.context_count
        else:  # rag_flat
            start = time.perf_counter()
            store = FlatStore(dim=dataset.spec.dim)
            populate_flat(store, dataset.contexts)
            store.consolidate()
            build_ms = (time.perf_counter() - start) * 1000.0
            size = len(store)
            depth = rag_scan_depth

            def run_query(q, _store=store, _depth=depth):
                hits = _store.flat_search(q, _depth)
                labels = []
                for _, value, _score in hits:
                    if value not in labels:
                        labels.append(value)
                        if len(labels) == topk:
                            break
                return labels

        for q in queries[: min(warmup, len(queries))]:
            run_query(q.embedding)

        predictions = []
        times_ms = np.zeros(len(queries))
        for i, q in enumerate(queries):
            start = time.perf_counter()
            ranked = run_query(q.embedding)
            times_ms[i] = (time.perf_counter() - start) * 1000.0
            predictions.append(ranked)

        reports.append(
            BenchReport(
                method=method,
                memory_size=size,
                top1=topk_accuracy(predictions, gold, 1),
                top5=topk_accuracy(predictions, gold, 5),
                median_latency_ms=float(np.median(times_ms)),
                p95_latency_ms=float(np.percentile(times_ms, 95)),
                build_time_ms=build_ms,
            )
        )
    return reports


# --------------------------------------------------------------------- import


def import_embeddings(context_file, label_map_file, modality: str = "image") -> list[ContextRecord]:
    """Turn user-supplied embeddings plus a label map into memory fill records.

    The label map JSON holds {"labels": {label_id: name}, "records":
    {record_id: label_id}}. Distinct label ids sharing one name collapse
    into a single tag because tags are keyed by name. A record whose label
    id (or record id) is missing from the map is a FormatError.
    """
    embeddings = read_embedding_file(context_file)
    with open(label_map_file, "r", encoding="utf-8") as fh:
        try:
            label_map = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"label map is not valid JSON: {exc}") from exc
    labels = label_map.get("labels")
    records = label_map.get("records")
    if not isinstance(labels, dict) or not isinstance(records, dict):
        raise FormatError('label map must hold "labels" and "records" objects')

    out: list[ContextRecord] = []
    for i, (rec_id, emb) in enumerate(embeddings.items()):
        label_id = records.get(rec_id)
        if label_id is None:
            raise FormatError(f"record {rec_id!r} has no entry in the label map", record=i)
        name = labels.get(label_id)
        if name is None:
            raise FormatError(
                f"record {rec_id!r} references unknown label id {label_id!r}", record=i
            )
        uri = None if modality == "text" else f"import://{rec_id}"
        out.append(
            ContextRecord(
                id=rec_id,
                content=rec_id,
                tags=(name,),
                modality=modality,
                uri=uri,
                timestamp=EPOCH + timedelta(seconds=i),
                embedding=emb,
            )
        )
    return out


# -------------------------------------------------------------- dataset files


def write_dataset(dataset: SyntheticDataset, outdir) -> None:
    """Write contexts.cpme, queries.cpme, and dataset.json under ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    write_embedding_file(
        os.path.join(outdir, "contexts.cpme"),
        {rec.id: rec.embedding for rec in dataset.contexts},
        dim=dataset.spec.dim,
    )
    write_embedding_file(
        os.path.join(outdir, "queries.cpme"),
        {q.qid: q.embedding for q in dataset.queries},
        dim=dataset.spec.dim,
    )
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "spec": asdict(dataset.spec),
        "context_labels": {rec.id: rec.tags[0] for rec in dataset.contexts},
        "query_gold": {q.qid: q.gold for q in dataset.queries},
    }
    with open(os.path.join(outdir, "dataset.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_dataset(outdir) -> SyntheticDataset:
    try:
        with open(os.path.join(outdir, "dataset.json"), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable dataset manifest: {exc}") from exc
    if manifest.get("format") != DATASET_FORMAT or manifest.get("version") != DATASET_VERSION:
        raise FormatError("not a dataset directory (bad manifest format/version)")

    spec = SyntheticDatasetSpec(**manifest["spec"])
    context_embs = read_embedding_file(os.path.join(outdir, "contexts.cpme"))
    query_embs = read_embedding_file(os.path.join(outdir, "queries.cpme"))
    labels = manifest["context_labels"]
    gold = manifest["query_gold"]

    contexts = []
    for i, (rec_id, emb) in enumerate(context_embs.items()):
        if rec_id not in labels:
            raise FormatError(f"context {rec_id!r} missing from context_labels", record=i)
        contexts.append(
            ContextRecord(
                id=rec_id,
                content=f"sample {rec_id}",
                tags=(labels[rec_id],),
                modality="text",
                uri=None,
                timestamp=EPOCH + timedelta(seconds=i),
                embedding=emb,
            )
        )
    queries = []
    for i, (qid, emb) in enumerate(query_embs.items()):
        if qid not in gold:
            raise FormatError(f"query {qid!r} missing from query_gold", record=i)
        queries.append(QueryRecord(qid=qid, embedding=emb, gold=gold[qid]))
    return SyntheticDataset(spec=spec, contexts=contexts, queries=queries)
