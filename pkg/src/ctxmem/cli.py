"""Command-line interface: gen, bench, import, tree, search, recall.

Flags mirror the library operation parameters one-to-one; run any
subcommand with --help to see every default.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone

from .bench import (
    METHODS,
    SyntheticDatasetSpec,
    format_report_table,
    gen_synthetic,
    import_embeddings,
    load_dataset,
    populate_memory,
    run_bench,
    write_dataset,
    write_reports,
)
from .embeddings import HashEmbedder
from .errors import CtxmemError
from .memory import ContextualMemory
from .recall import RecallMemory
from .search import QueryPart, cope_search, flat_cope_search
from .tree import build_tree


def _add_gen(sub):
    p = sub.add_parser(
        "gen",
        help="expand a synthetic dataset spec into dataset files",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--classes", type=int, default=100, help="number of classes (one tag each)")
    p.add_argument("--train-per-class", type=int, default=100, help="contexts per class")
    p.add_argument("--queries-per-class", type=int, default=10, help="queries per class")
    p.add_argument("--dim", type=int, default=64, help="embedding dimension")
    p.add_argument("--noise-scale", type=float, default=0.05, help="gaussian noise scale")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--out", required=True, help="output dataset directory")


def _add_bench(sub):
    p = sub.add_parser(
        "bench",
        help="run the retrieval benchmark over a generated dataset",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--dataset", required=True, help="dataset directory from `gen`")
    p.add_argument(
        "--methods",
        default=",".join(METHODS),
        help="comma-separated subset of " + ",".join(METHODS),
    )
    p.add_argument("--topk", type=int, default=5, help="ranked labels per query")
    p.add_argument("--warmup", type=int, default=100, help="untimed warmup queries")
    p.add_argument("--report", default=None, help="write newline-delimited JSON reports here")


def _add_import(sub):
    p = sub.add_parser(
        "import",
        help="build a memory snapshot from precomputed embeddings + label map",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--contexts", required=True, help="embedding file (CPME format)")
    p.add_argument("--labels", required=True, help='JSON label map {"labels":..., "records":...}')
    p.add_argument("--modality", default="image", help="modality recorded on imported contexts")
    p.add_argument("--out", required=True, help="output snapshot path")


def _add_tree(sub):
    p = sub.add_parser(
        "tree",
        help="build the contextual tree for a snapshot and dump it as JSON",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--snapshot", required=True, help="memory snapshot path")
    p.add_argument("--target-dim", type=int, default=None, help="reducer target dim (default min(16, dim))")
    p.add_argument("--out", required=True, help="output JSON path")


def _add_search(sub):
    p = sub.add_parser(
        "search",
        help="run concept searches from a query file against a snapshot",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--snapshot", required=True, help="memory snapshot path")
    p.add_argument("--query-file", required=True, help='NDJSON: {"parts": [[content, modality], ...]}')
    p.add_argument("--topk", type=int, default=5, help="concepts to retrieve")
    p.add_argument("--personalization-limit", type=int, default=None, help="neighbor tags to add (default topk)")
    p.add_argument("--flat", action="store_true", help="scan all tags instead of descending the tree")
    p.add_argument("--max-contexts", type=int, default=5, help="context lines printed per query")


def _add_recall(sub):
    p = sub.add_parser(
        "recall",
        help="append to or search a recall log file",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    ops = p.add_subparsers(dest="recall_op", required=True)

    ap = ops.add_parser("append", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("--log", required=True, help="log file (newline-delimited JSON)")
    ap.add_argument("--role", required=True, choices=["user", "agent", "system", "function"])
    ap.add_argument("--text", required=True)
    ap.add_argument("--timestamp", default=None, help="ISO-8601 UTC; defaults to now")

    sp = ops.add_parser("search", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sp.add_argument("--log", required=True)
    sp.add_argument("--query", required=True, help="case-insensitive substring")
    sp.add_argument("--page", type=int, default=0)

    dp = ops.add_parser("search-date", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    dp.add_argument("--log", required=True)
    dp.add_argument("--start", required=True, help="YYYY-MM-DD")
    dp.add_argument("--end", required=True, help="YYYY-MM-DD")
    dp.add_argument("--page", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxmem",
        description="Contextual memory engine: datasets, benchmarks, snapshots, search, recall.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen(sub)
    _add_bench(sub)
    _add_import(sub)
    _add_tree(sub)
    _add_search(sub)
    _add_recall(sub)
    return parser


def _cmd_gen(args) -> int:
    spec = SyntheticDatasetSpec(
        classes=args.classes,
        train_per_class=args.train_per_class,
        queries_per_class=args.queries_per_class,
        dim=args.dim,
        noise_scale=args.noise_scale,
        seed=args.seed,
    )
    dataset = gen_synthetic(spec)
    write_dataset(dataset, args.out)
    print(
        f"wrote {len(dataset.contexts)} contexts / {len(dataset.queries)} queries to {args.out}"
    )
    return 0


def _cmd_bench(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    dataset = load_dataset(args.dataset)
    reports = run_bench(dataset, methods=methods, topk=args.topk, warmup=args.warmup)
    print(format_report_table(reports))
    if args.report:
        write_reports(args.report, reports)
        print(f"report written to {args.report}")
    return 0


def _cmd_import(args) -> int:
    records = import_embeddings(args.contexts, args.labels, modality=args.modality)
    memory = ContextualMemory()
    populate_memory(memory, records)
    memory.save_snapshot(args.out)
    print(
        f"imported {memory.context_count} contexts under {memory.tag_count} tags -> {args.out}"
    )
    return 0


def _cmd_tree(args) -> int:
    memory = ContextualMemory.load_snapshot(args.snapshot)
    tree = build_tree(memory, target_dim=args.target_dim)
    tree.dump(args.out)
    print(f"tree over {tree.built_from} tags, level sizes {tree.level_sizes} -> {args.out}")
    return 0


def _cmd_search(args) -> int:
    memory = ContextualMemory.load_snapshot(args.snapshot)
    embedder = HashEmbedder(memory.dim)
    tree = None if args.flat else build_tree(memory)
    with open(args.query_file, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            query = json.loads(line)
            parts = [QueryPart(content, modality) for content, modality in query["parts"]]
            topk = query.get("topk", args.topk)
            if args.flat:
                result = flat_cope_search(
                    parts, topk, memory, embedder, args.personalization_limit
                )
            else:
                result = cope_search(
                    parts, topk, memory, tree, embedder, args.personalization_limit
                )
            label = query.get("id", f"query-{lineno}")
            print(f"{label}: tags {', '.join(result.tags)}")
            for cid, score in result.contexts[: args.max_contexts]:
                node = memory.get_context(cid)
                print(f"  {cid} ({score:.4f}): {node.content}")
    return 0


def _cmd_recall(args) -> int:
    log = RecallMemory(path=args.log)
    try:
        if args.recall_op == "append":
            if args.timestamp is None:
                ts = datetime.now(timezone.utc)
            else:
                ts = datetime.fromisoformat(args.timestamp)
            seq = log.append_entry(args.role, args.text, ts)
            print(f"appended seq {seq}")
        elif args.recall_op == "search":
            entries, total, has_more = log.conversation_search(args.query, args.page)
            _print_recall(entries, total, has_more, args.page)
        else:
            entries, total, has_more = log.conversation_search_date(
                args.start, args.end, args.page
            )
            _print_recall(entries, total, has_more, args.page)
    finally:
        log.close()
    return 0


def _print_recall(entries, total, has_more, page) -> None:
    print(f"{total} match(es), page {page}, has_more={str(has_more).lower()}")
    for e in entries:
        print(f"[{e.seq}] {e.role} {e.timestamp.strftime('%Y-%m-%dT%H:%M:%SZ')}: {e.text}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen": _cmd_gen,
        "bench": _cmd_bench,
        "import": _cmd_import,
        "tree": _cmd_tree,
        "search": _cmd_search,
        "recall": _cmd_recall,
    }
    try:
        return handlers[args.command](args)
    except CtxmemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
