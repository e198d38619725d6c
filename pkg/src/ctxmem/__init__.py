"""ctxmem: graph-structured multimodal contextual memory with concept-first retrieval.

Building blocks:

- :mod:`ctxmem.embeddings` — vector math, deterministic synthetic/stub
  embedders, and the binary embedding file format.
- :mod:`ctxmem.memory` — the tag-graph context store with snapshots.
- :mod:`ctxmem.tree` — the immutable cluster hierarchy over tags.
- :mod:`ctxmem.search` — concept-first retrieval (tree descent or flat
  tag scan, personalized expansion, context ranking).
- :mod:`ctxmem.recall` — append-only conversation log with paginated search.
- :mod:`ctxmem.agent` — in-context memory, eviction, and function dispatch.
- :mod:`ctxmem.baseline` — the flat key-value scan baseline.
- :mod:`ctxmem.metrics` — ROUGE-L and top-k accuracy.
- :mod:`ctxmem.bench` — synthetic datasets, embedding import, benchmark grid.
"""

from .agent import (
    AgentEngine,
    FirstTokensSummarizer,
    FunctionCallEnvelope,
    InContextMemory,
    add_message,
    core_memory_append,
    core_memory_replace,
    default_tool_registry,
    dispatch,
    evict_if_needed,
    read_trace,
    replay_trace,
    whitespace_tokens,
    write_trace,
)
from .baseline import FlatRecord, FlatStore
from .bench import (
    BenchReport,
    ContextRecord,
    QueryRecord,
    SyntheticDataset,
    SyntheticDatasetSpec,
    format_report_table,
    gen_synthetic,
    import_embeddings,
    load_dataset,
    populate_flat,
    populate_memory,
    run_bench,
    write_dataset,
    write_reports,
)
from .embeddings import (
    Embedder,
    HashEmbedder,
    LookupEmbedder,
    as_embedding,
    class_centroid,
    cosine_similarity,
    mean_embedding,
    read_embedding_file,
    synthetic_embed,
    write_embedding_file,
)
from .errors import (
    ArgumentError,
    BudgetError,
    CtxmemError,
    DateError,
    DimensionError,
    DuplicateError,
    EmptyInputError,
    EmptySearchError,
    FormatError,
    InvalidNodeError,
    ModalityError,
    NoMatchError,
    NotFoundError,
    OrderError,
    SectionError,
    StaleIndexError,
    UnknownFunctionError,
    UnknownToolError,
    ValidationError,
)
from .memory import ContextNode, ContextualMemory, TagNode
from .metrics import RougeScore, rouge_l, tokenize, topk_accuracy
from .recall import RecallEntry, RecallMemory
from .search import (
    QueryPart,
    SearchResult,
    cope_search,
    cope_search_embedded,
    flat_cope_search,
    flat_cope_search_embedded,
    fuse_query,
    personalized_tags,
    rank_tags,
)
from .tree import (
    AverageLinkageClusterer,
    ContextualTree,
    PCAReducer,
    TreeNode,
    build_tree,
)

__version__ = "0.1.0"
