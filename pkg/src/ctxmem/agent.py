"""Function-call dispatch surface and in-context memory management.

The in-context memory models what the planner always sees: a persona
block, a human block, and the recent message window, all counted against a
token budget. Overflow evicts the oldest half of the messages and replaces
them with one lossy summary message, repeating until the budget holds.

``dispatch`` routes wire envelopes {"name", "arguments", "call_id"} to the
engine: memory inserts, concept search, recall search, core-memory edits,
and the pluggable tool stubs (encoders/generators/messaging). It is total:
every envelope produces exactly one value payload or one structured error
payload, never an exception.

An :class:`AgentEngine` bundles the stores with a deterministic logical
clock so a recorded envelope trace replays to an identical state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable

from .embeddings import HashEmbedder, MODALITIES
from .errors import (
    ArgumentError,
    BudgetError,
    CtxmemError,
    NoMatchError,
    SectionError,
    UnknownFunctionError,
    UnknownToolError,
)
from .memory import ContextualMemory
from .recall import RecallMemory
from .search import QueryPart, cope_search
from .tree import build_tree

SECTIONS = ("persona", "human")


def whitespace_tokens(text: str) -> int:
    """Default token counter: whitespace-separated tokens."""
    return len(text.split())


@dataclass
class InContextMemory:
    persona: str = ""
    human: str = ""
    messages: list[tuple[str, str]] = field(default_factory=list)
    token_budget: int = 2048
    tokenizer: Callable[[str], int] = whitespace_tokens

    def block_tokens(self) -> int:
        return self.tokenizer(self.persona) + self.tokenizer(self.human)

    def token_count(self) -> int:
        return self.block_tokens() + sum(self.tokenizer(text) for _, text in self.messages)


class FirstTokensSummarizer:
    """Deterministic lossy summary: header plus each message's first 10 tokens."""

    snippet_tokens = 10

    def summarize(self, messages) -> str:
        snippets = [
            " ".join(text.split()[: self.snippet_tokens]) for _, text in messages
        ]
        return f"SUMMARY of {len(messages)} messages: " + " ".join(snippets)


def core_memory_append(name: str, content: str, mem: InContextMemory, summarizer=None) -> InContextMemory:
    """Append content to the persona or human block, evicting messages if needed."""
    if name not in SECTIONS:
        raise SectionError(f"unknown section {name!r}, expected one of {SECTIONS}")
    current = getattr(mem, name)
    setattr(mem, name, content if not current else current + "\n" + content)
    return evict_if_needed(mem, summarizer or FirstTokensSummarizer())


def core_memory_replace(
    name: str, old_content: str, new_content: str, mem: InContextMemory, summarizer=None
) -> InContextMemory:
    """Replace the first exact occurrence of old_content; empty new_content deletes."""
    if name not in SECTIONS:
        raise SectionError(f"unknown section {name!r}, expected one of {SECTIONS}")
    current = getattr(mem, name)
    if not old_content or old_content not in current:
        raise NoMatchError(f"no exact match for {old_content!r} in {name}")
    setattr(mem, name, current.replace(old_content, new_content, 1))
    return evict_if_needed(mem, summarizer or FirstTokensSummarizer())


def add_message(mem: InContextMemory, role: str, text: str, summarizer=None) -> InContextMemory:
    """Append a conversation message and enforce the budget."""
    mem.messages.append((role, text))
    return evict_if_needed(mem, summarizer or FirstTokensSummarizer())


def evict_if_needed(mem: InContextMemory, summarizer) -> InContextMemory:
    """Evict the oldest half of the messages into a lossy summary until the budget holds.

    The persona/human blocks are never touched; if they alone exceed the
    budget, or an eviction round cannot shrink the message window any
    further, BudgetError is raised so the budget invariant stays total.
    """
    if mem.block_tokens() > mem.token_budget:
        raise BudgetError(
            f"persona+human need {mem.block_tokens()} tokens, budget is {mem.token_budget}"
        )
    while mem.token_count() > mem.token_budget:
        n = len(mem.messages)
        if n < 2:
            raise BudgetError(
                f"cannot fit within budget {mem.token_budget}: "
                f"{mem.token_count()} tokens with {n} message(s) left"
            )
        cut = math.ceil(n / 2)
        evicted, survivors = mem.messages[:cut], mem.messages[cut:]
        summary = ("system", summarizer.summarize(evicted))
        before = sum(mem.tokenizer(text) for _, text in mem.messages)
        after = mem.tokenizer(summary[1]) + sum(mem.tokenizer(text) for _, text in survivors)
        if after >= before:
            raise BudgetError(
                "eviction made no progress: summary is not smaller than the evicted messages"
            )
        mem.messages = [summary] + survivors
    return mem


# --------------------------------------------------------------------- engine


class LogicalClock:
    """Counter-driven UTC clock so replayed traces are deterministic."""

    def __init__(self, epoch: datetime | None = None):
        self.epoch = epoch or datetime(2024, 1, 1, tzinfo=timezone.utc)
        self.ticks = 0

    def next(self) -> datetime:
        ts = self.epoch + timedelta(seconds=self.ticks)
        self.ticks += 1
        return ts


class StubTool:
    """Canned tool implementation that records every call it receives."""

    def __init__(self, name: str):
        self.name = name
        self.calls: list[dict] = []

    def __call__(self, **kwargs) -> str:
        self.calls.append(dict(kwargs))
        return f"{self.name}:ok:{len(self.calls)}"


TOOL_FUNCTIONS = (
    "encode_image",
    "encode_audio",
    "encode_video",
    "generate_image",
    "generate_video",
    "generate_audio",
    "edit_image",
    "send_message",
)


def default_tool_registry() -> dict[str, Callable[..., str]]:
    return {name: StubTool(name) for name in TOOL_FUNCTIONS}


class AgentEngine:
    """Bundle of all memories plus dispatch state for one agent instance.

    Dispatch is sequential per instance. cope_search envelopes rebuild the
    contextual tree when the tag set drifted since the last build; rebuilds
    are counted in ``tree_builds`` so the cost stays observable.
    """

    def __init__(
        self,
        dim: int = 64,
        embedder=None,
        persona: str = "",
        human: str = "",
        token_budget: int = 2048,
        recall_path=None,
        topk: int = 5,
        personalization_limit: int | None = None,
        tools: dict | None = None,
        page_size: int = 5,
    ):
        self.contextual = ContextualMemory(dim=dim)
        self.recall = RecallMemory(path=recall_path, page_size=page_size)
        self.embedder = embedder or HashEmbedder(dim)
        self.summarizer = FirstTokensSummarizer()
        self.incontext = InContextMemory(
            persona=persona, human=human, token_budget=token_budget
        )
        self.tools = tools if tools is not None else default_tool_registry()
        self.topk = topk
        self.personalization_limit = personalization_limit
        self.tree = None
        self.tree_builds = 0
        self.call_log: list[dict] = []
        self._clock = LogicalClock()

    def now(self) -> datetime:
        return self._clock.next()

    def log_message(self, role: str, text: str) -> int:
        """Append one conversation message to the recall log (engine-timestamped)."""
        return self.recall.append_entry(role, text, self.now())

    def ensure_tree(self):
        current = frozenset(self.contextual.tag_names())
        if self.tree is None or self.tree.tag_names != current:
            self.tree = build_tree(self.contextual)
            self.tree_builds += 1
        return self.tree


# ------------------------------------------------------------------- dispatch


@dataclass(frozen=True)
class FunctionCallEnvelope:
    name: str
    arguments: dict
    call_id: str

    def to_json(self) -> str:
        return json.dumps(
            {"name": self.name, "arguments": self.arguments, "call_id": self.call_id},
            ensure_ascii=False,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "FunctionCallEnvelope":
        obj = json.loads(line)
        return cls(
            name=obj.get("name"),
            arguments=obj.get("arguments") or {},
            call_id=obj.get("call_id"),
        )


# argument schemas: name -> {arg: (type tag, required)}
_SCHEMAS: dict[str, dict[str, tuple[str, bool]]] = {
    "encode_image": {"filepath": ("str", True), "motive": ("str", False)},
    "encode_audio": {"filepath": ("str", True), "motive": ("str", False)},
    "encode_video": {"filepath": ("str", True), "motive": ("str", False)},
    "core_memory_append": {"name": ("str", True), "content": ("str", True)},
    "core_memory_replace": {
        "name": ("str", True),
        "old_content": ("str", True),
        "new_content": ("str", True),
    },
    "contextual_memory_insert": {
        "content": ("str", True),
        "tags": ("str", True),
        "conversation": ("str", True),
        "filepath": ("str", False),
        "modality": ("str", True),
    },
    "conversation_search": {"query": ("str", True), "page": ("int", False)},
    "conversation_search_date": {
        "start_date": ("str", True),
        "end_date": ("str", True),
        "page": ("int", False),
    },
    "cope_search": {"query": ("query_list", True), "motive": ("str", False)},
    "generate_image": {"prompt": ("str", True), "motive": ("str", False)},
    "generate_video": {"prompt": ("str", True), "motive": ("str", False)},
    "generate_audio": {"prompt": ("str", True), "motive": ("str", False)},
    "edit_image": {
        "prompt": ("str", True),
        "filepaths": ("str", True),
        "motive": ("str", False),
    },
    "send_message": {"message": ("str", True)},
}


def _validate_arguments(name: str, arguments: dict) -> dict:
    schema = _SCHEMAS[name]
    for arg in arguments:
        if arg not in schema:
            raise ArgumentError(f"unknown argument {arg!r} for {name}")
    out = {}
    for arg, (kind, required) in schema.items():
        if arg not in arguments:
            if required:
                raise ArgumentError(f"missing argument {arg!r} for {name}")
            continue
        value = arguments[arg]
        if kind == "str":
            if not isinstance(value, str):
                raise ArgumentError(f"argument {arg!r} of {name} must be a string")
        elif kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ArgumentError(f"argument {arg!r} of {name} must be an integer")
        elif kind == "query_list":
            value = _validate_query_list(value)
        out[arg] = value
    return out


def _validate_query_list(value) -> list[tuple[str, str]]:
    if not isinstance(value, list) or not value:
        raise ArgumentError("argument 'query' must be a nonempty list of (content, modality) pairs")
    pairs = []
    for item in value:
        if not (isinstance(item, (list, tuple)) and len(item) == 2):
            raise ArgumentError("each query entry must be a (content, modality) pair")
        content, modality = item
        if not isinstance(content, str) or not content:
            raise ArgumentError("query content must be a nonempty string")
        if modality not in MODALITIES:
            raise ArgumentError(f"unknown query modality {modality!r}")
        pairs.append((content, modality))
    return pairs


def dispatch(envelope, engine: AgentEngine, tool_registry=None) -> dict:
    """Route one envelope; always returns a response payload, never raises.

    Success: {"call_id", "ok": True, "value": str}.
    Failure: {"call_id", "ok": False, "error": {"type", "message"}}.
    """
    if isinstance(envelope, dict):
        call_id = envelope.get("call_id")
        name = envelope.get("name")
        arguments = envelope.get("arguments")
    else:
        call_id, name, arguments = envelope.call_id, envelope.name, envelope.arguments

    def failure(exc: Exception) -> dict:
        return {
            "call_id": call_id,
            "ok": False,
            "error": {"type": type(exc).__name__, "message": str(exc)},
        }

    try:
        if not isinstance(name, str) or not name:
            raise ArgumentError("envelope is missing a function name")
        if not isinstance(call_id, str) or not call_id:
            raise ArgumentError("envelope is missing a call_id")
        if arguments is None:
            arguments = {}
        if not isinstance(arguments, dict):
            raise ArgumentError("envelope arguments must be an object")
        if name not in _SCHEMAS:
            raise UnknownFunctionError(f"unknown function {name!r}")
        args = _validate_arguments(name, arguments)
        engine.call_log.append({"call_id": call_id, "name": name, "arguments": args})
        tools = engine.tools if tool_registry is None else tool_registry
        value = _execute(name, args, engine, tools)
        return {"call_id": call_id, "ok": True, "value": value}
    except CtxmemError as exc:
        return failure(exc)
    except Exception as exc:  # totality guard: never leak an exception
        return failure(exc)


def _execute(name: str, args: dict, engine: AgentEngine, tools) -> str:
    if name in TOOL_FUNCTIONS:
        tool = tools.get(name)
        if tool is None:
            raise UnknownToolError(f"no tool registered for {name!r}")
        return str(tool(**args))

    if name == "core_memory_append":
        core_memory_append(args["name"], args["content"], engine.incontext, engine.summarizer)
        return f"appended {whitespace_tokens(args['content'])} token(s) to {args['name']}"

    if name == "core_memory_replace":
        core_memory_replace(
            args["name"], args["old_content"], args["new_content"], engine.incontext,
            engine.summarizer,
        )
        action = "deleted from" if args["new_content"] == "" else "replaced in"
        return f"{action} {args['name']}"

    if name == "contextual_memory_insert":
        tags = [t.strip() for t in args["tags"].split(";") if t.strip()]
        modality = args["modality"]
        uri = args.get("filepath")
        source = args["content"] if modality == "text" else (uri or "")
        embedding = engine.embedder.embed(source, modality)
        node_id = engine.contextual.insert_context(
            content=args["content"],
            tags=tags,
            modality=modality,
            uri=uri,
            timestamp=engine.now(),
            embedding=embedding,
        )
        return f"stored {node_id} with tags: {'; '.join(tags)}"

    if name == "conversation_search":
        entries, total, has_more = engine.recall.conversation_search(
            args["query"], args.get("page", 0)
        )
        return _format_recall(entries, total, has_more, args.get("page", 0))

    if name == "conversation_search_date":
        entries, total, has_more = engine.recall.conversation_search_date(
            args["start_date"], args["end_date"], args.get("page", 0)
        )
        return _format_recall(entries, total, has_more, args.get("page", 0))

    if name == "cope_search":
        parts = [QueryPart(content, modality) for content, modality in args["query"]]
        tree = engine.ensure_tree()
        result = cope_search(
            parts,
            engine.topk,
            engine.contextual,
            tree,
            engine.embedder,
            engine.personalization_limit,
        )
        lines = [f"tags: {', '.join(result.tags)}"]
        for cid, score in result.contexts[: engine.topk]:
            node = engine.contextual.get_context(cid)
            lines.append(f"{cid} ({score:.4f}): {node.content}")
        return "\n".join(lines)

    raise UnknownFunctionError(f"unknown function {name!r}")


def _format_recall(entries, total, has_more, page) -> str:
    lines = [f"{total} match(es), page {page}, has_more={str(has_more).lower()}"]
    for e in entries:
        lines.append(f"[{e.seq}] {e.role} {e.timestamp.strftime('%Y-%m-%dT%H:%M:%SZ')}: {e.text}")
    return "\n".join(lines)


# ---------------------------------------------------------------- trace files


def write_trace(path, envelopes) -> None:
    """Newline-delimited envelope JSON for replay testing."""
    with open(path, "w", encoding="utf-8") as fh:
        for env in envelopes:
            if isinstance(env, FunctionCallEnvelope):
                fh.write(env.to_json() + "\n")
            else:
                fh.write(json.dumps(env, ensure_ascii=False, sort_keys=True) + "\n")


def read_trace(path) -> list[FunctionCallEnvelope]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(FunctionCallEnvelope.from_json(line))
    return out


def replay_trace(envelopes, engine: AgentEngine, tool_registry=None) -> list[dict]:
    """Dispatch every envelope in order, collecting the response payloads."""
    return [dispatch(env, engine, tool_registry) for env in envelopes]
