import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxmem import (
    AgentEngine,
    BudgetError,
    FirstTokensSummarizer,
    FunctionCallEnvelope,
    InContextMemory,
    NoMatchError,
    SectionError,
    add_message,
    core_memory_append,
    core_memory_replace,
    dispatch,
    evict_if_needed,
    read_trace,
    replay_trace,
    whitespace_tokens,
    write_trace,
)


def msg(i: int, tokens: int) -> tuple[str, str]:
    return ("user", " ".join([f"m{i}"] + [f"w{j}" for j in range(tokens - 1)]))


class TestCoreMemory:
    def test_append_to_human(self):
        mem = InContextMemory(persona="helpful", human="name: Sam", token_budget=100)
        core_memory_append("human", "likes corgis", mem)
        assert mem.human.endswith("likes corgis")
        assert mem.persona == "helpful"

    def test_append_bad_section(self):
        mem = InContextMemory(token_budget=100)
        with pytest.raises(SectionError):
            core_memory_append("tools", "x", mem)

    def test_append_overflow_evicts_messages_not_blocks(self):
        mem = InContextMemory(persona="p1 p2", human="h1", token_budget=95)
        for i in range(6):
            add_message(mem, *msg(i, 15))
        # 3 + 90 = 93 tokens; appending 5 more pushes to 98 -> eviction
        core_memory_append("human", "a b c d e", mem)
        assert mem.human == "h1\na b c d e"
        assert mem.persona == "p1 p2"
        assert mem.token_count() <= 95
        assert mem.messages[0][0] == "system"  # summary took the oldest slot

    def test_replace(self):
        mem = InContextMemory(human="has a cat", token_budget=100)
        core_memory_replace("human", "cat", "dog", mem)
        assert mem.human == "has a dog"

    def test_replace_wrong_case(self):
        mem = InContextMemory(human="has a cat", token_budget=100)
        with pytest.raises(NoMatchError):
            core_memory_replace("human", "Cat", "dog", mem)

    def test_replace_empty_deletes(self):
        mem = InContextMemory(human="xyz", token_budget=100)
        core_memory_replace("human", "x", "", mem)
        assert mem.human == "yz"

    def test_replace_first_occurrence_only(self):
        mem = InContextMemory(persona="cat and cat", token_budget=100)
        core_memory_replace("persona", "cat", "dog", mem)
        assert mem.persona == "dog and cat"


class TestEviction:
    def test_under_budget_unchanged(self):
        mem = InContextMemory(persona="p", token_budget=50)
        add_message(mem, *msg(0, 5))
        snapshot = list(mem.messages)
        evict_if_needed(mem, FirstTokensSummarizer())
        assert mem.messages == snapshot

    def test_ten_messages_one_round(self):
        # token-count oracle with the whitespace tokenizer:
        # base 3 + 10*15 = 153 tokens, budget 140; evicting the oldest 5
        # leaves summary (4 + 5*10 = 54) + 5*15 = 132 <= 140
        mem = InContextMemory(persona="p1 p2", human="h1", token_budget=140)
        mem.messages = [msg(i, 15) for i in range(10)]
        assert mem.token_count() == 153
        evict_if_needed(mem, FirstTokensSummarizer())
        assert len(mem.messages) == 6
        assert mem.messages[0][0] == "system"
        assert mem.messages[0][1].startswith("SUMMARY of 5 messages: m0")
        assert whitespace_tokens(mem.messages[0][1]) == 54
        assert mem.messages[1:] == [msg(i, 15) for i in range(5, 10)]
        assert mem.token_count() == 132 <= 140

    def test_budget_smaller_than_blocks(self):
        mem = InContextMemory(persona="a b c d e", human="f g h", token_budget=7)
        with pytest.raises(BudgetError):
            evict_if_needed(mem, FirstTokensSummarizer())

    def test_no_progress_raises(self):
        # two-token messages: the summary is never smaller, so the budget
        # is unsatisfiable and eviction must say so instead of looping
        mem = InContextMemory(token_budget=5)
        mem.messages = [("user", "a b"), ("user", "c d"), ("user", "e f")]
        with pytest.raises(BudgetError):
            evict_if_needed(mem, FirstTokensSummarizer())

    def test_multi_round_eviction(self):
        mem = InContextMemory(persona="p", token_budget=60)
        mem.messages = [msg(i, 20) for i in range(16)]
        evict_if_needed(mem, FirstTokensSummarizer())
        assert mem.token_count() <= 60

    @settings(max_examples=80, deadline=None)
    @given(
        st.lists(st.integers(min_value=16, max_value=30), min_size=0, max_size=25),
        st.integers(min_value=44, max_value=250),
        st.integers(min_value=0, max_value=6),
    )
    def test_budget_always_holds(self, lengths, headroom, base_tokens):
        persona = " ".join(f"p{i}" for i in range(base_tokens))
        mem = InContextMemory(persona=persona, token_budget=base_tokens + headroom)
        mem.messages = [msg(i, n) for i, n in enumerate(lengths)]
        evict_if_needed(mem, FirstTokensSummarizer())
        assert mem.token_count() <= mem.token_budget

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(min_value=16, max_value=30), min_size=4, max_size=25))
    def test_survivor_order_and_blocks_preserved(self, lengths):
        mem = InContextMemory(persona="keep me", human="and me", token_budget=80)
        originals = [msg(i, n) for i, n in enumerate(lengths)]
        mem.messages = list(originals)
        evict_if_needed(mem, FirstTokensSummarizer())
        assert mem.persona == "keep me" and mem.human == "and me"
        survivors = [m for m in mem.messages if m[0] != "system"]
        assert survivors == originals[len(originals) - len(survivors) :]


def env(name, arguments, call_id="c0"):
    return {"name": name, "arguments": arguments, "call_id": call_id}


class TestDispatch:
    def test_conversation_search_routed(self):
        engine = AgentEngine(dim=8)
        engine.log_message("user", "my pet is named Cheddar")
        engine.log_message("agent", "noted!")
        res = dispatch(env("conversation_search", {"query": "pet", "page": 0}), engine)
        assert res["ok"] is True
        assert "1 match(es)" in res["value"]
        assert "Cheddar" in res["value"]

    def test_unknown_function(self):
        engine = AgentEngine(dim=8)
        res = dispatch(env("fly_to_moon", {}), engine)
        assert res["ok"] is False
        assert res["error"]["type"] == "UnknownFunctionError"
        assert res["call_id"] == "c0"

    def test_missing_argument_named(self):
        engine = AgentEngine(dim=8)
        res = dispatch(
            env(
                "contextual_memory_insert",
                {"content": "x", "tags": "a", "conversation": ""},
            ),
            engine,
        )
        assert res["ok"] is False
        assert res["error"]["type"] == "ArgumentError"
        assert "modality" in res["error"]["message"]

    def test_insert_then_search_round_trip(self):
        engine = AgentEngine(dim=16)
        res = dispatch(
            env(
                "contextual_memory_insert",
                {
                    "content": "Cheddar dressed as a clown",
                    "tags": "pet; costume; adorable",
                    "conversation": "user: look at this!",
                    "modality": "text",
                },
            ),
            engine,
        )
        assert res["ok"] is True and "ctx-00000000" in res["value"]
        assert engine.contextual.tag_names() == ["adorable", "costume", "pet"]

        search = dispatch(
            env("cope_search", {"query": [["pet costume", "text"]], "motive": "recall"}, "c1"),
            engine,
        )
        assert search["ok"] is True
        assert search["value"].startswith("tags: ")
        assert "ctx-00000000" in search["value"]
        assert engine.tree_builds == 1

    def test_tree_rebuilt_after_tag_drift(self):
        engine = AgentEngine(dim=8)
        dispatch(
            env(
                "contextual_memory_insert",
                {"content": "a", "tags": "one", "conversation": "", "modality": "text"},
            ),
            engine,
        )
        dispatch(env("cope_search", {"query": [["a", "text"]]}, "c1"), engine)
        dispatch(
            env(
                "contextual_memory_insert",
                {"content": "b", "tags": "two", "conversation": "", "modality": "text"},
                "c2",
            ),
            engine,
        )
        dispatch(env("cope_search", {"query": [["b", "text"]]}, "c3"), engine)
        assert engine.tree_builds == 2

    def test_text_with_filepath_is_modality_error(self):
        engine = AgentEngine(dim=8)
        res = dispatch(
            env(
                "contextual_memory_insert",
                {
                    "content": "x",
                    "tags": "a",
                    "conversation": "",
                    "modality": "text",
                    "filepath": "file:///x",
                },
            ),
            engine,
        )
        assert res["ok"] is False and res["error"]["type"] == "ModalityError"

    def test_image_insert_uses_filepath(self):
        engine = AgentEngine(dim=8)
        res = dispatch(
            env(
                "contextual_memory_insert",
                {
                    "content": "park photo",
                    "tags": "dog; park",
                    "conversation": "",
                    "modality": "image",
                    "filepath": "file:///park.jpg",
                },
            ),
            engine,
        )
        assert res["ok"] is True
        node = engine.contextual.get_context("ctx-00000000")
        assert node.uri == "file:///park.jpg"
        np.testing.assert_array_equal(
            node.embedding,
            np.asarray(
                engine.embedder.embed("file:///park.jpg", "image"), dtype=np.float32
            ).astype(np.float64),
        )

    def test_core_memory_functions_routed(self):
        engine = AgentEngine(dim=8, human="likes tea")
        ok = dispatch(env("core_memory_append", {"name": "human", "content": "likes corgis"}), engine)
        assert ok["ok"] is True and engine.incontext.human.endswith("likes corgis")
        rep = dispatch(
            env("core_memory_replace", {"name": "human", "old_content": "tea", "new_content": "coffee"}, "c1"),
            engine,
        )
        assert rep["ok"] is True and "coffee" in engine.incontext.human
        bad = dispatch(env("core_memory_append", {"name": "tools", "content": "x"}, "c2"), engine)
        assert bad["ok"] is False and bad["error"]["type"] == "SectionError"

    def test_tool_stubs_and_missing_tool(self):
        engine = AgentEngine(dim=8)
        res = dispatch(env("encode_image", {"filepath": "x.png", "motive": "caption"}), engine)
        assert res["ok"] is True and res["value"] == "encode_image:ok:1"
        res2 = dispatch(env("send_message", {"message": "hello!"}, "c1"), engine)
        assert res2["ok"] is True

        naked = dispatch(env("generate_image", {"prompt": "corgi"}, "c2"), engine, tool_registry={})
        assert naked["ok"] is False and naked["error"]["type"] == "UnknownToolError"

    def test_argument_type_checks(self):
        engine = AgentEngine(dim=8)
        bad_page = dispatch(env("conversation_search", {"query": "x", "page": "0"}), engine)
        assert bad_page["ok"] is False and bad_page["error"]["type"] == "ArgumentError"
        bool_page = dispatch(env("conversation_search", {"query": "x", "page": True}, "c1"), engine)
        assert bool_page["ok"] is False
        unknown_arg = dispatch(env("send_message", {"message": "x", "volume": 11}, "c2"), engine)
        assert unknown_arg["ok"] is False and "volume" in unknown_arg["error"]["message"]
        bad_query = dispatch(env("cope_search", {"query": [["x"]]}, "c3"), engine)
        assert bad_query["ok"] is False and bad_query["error"]["type"] == "ArgumentError"

    def test_envelope_shape_errors(self):
        engine = AgentEngine(dim=8)
        no_name = dispatch({"arguments": {}, "call_id": "c9"}, engine)
        assert no_name["ok"] is False and no_name["call_id"] == "c9"
        no_call_id = dispatch({"name": "send_message", "arguments": {"message": "x"}}, engine)
        assert no_call_id["ok"] is False and no_call_id["call_id"] is None
        bad_args = dispatch({"name": "send_message", "arguments": 7, "call_id": "c1"}, engine)
        assert bad_args["ok"] is False

    def test_dispatch_totality(self):
        engine = AgentEngine(dim=8)
        weird = [
            {},
            {"name": 42, "call_id": "x"},
            env("cope_search", {"query": []}),
            env("cope_search", {"query": [["q", "text"]]}, "empty-memory"),
            env("conversation_search_date", {"start_date": "2024-13-01", "end_date": "2024-12-31"}),
            env("core_memory_replace", {"name": "human", "old_content": "absent", "new_content": ""}),
        ]
        for envelope in weird:
            res = dispatch(envelope, engine)
            assert res["ok"] is False and "error" in res


class TestTraceReplay:
    def _trace(self):
        return [
            FunctionCallEnvelope(
                "contextual_memory_insert",
                {
                    "content": "Cheddar likes costumes",
                    "tags": "pet; costume",
                    "conversation": "user: meet Cheddar",
                    "modality": "text",
                },
                "t0",
            ),
            FunctionCallEnvelope("core_memory_append", {"name": "human", "content": "has a corgi"}, "t1"),
            FunctionCallEnvelope("cope_search", {"query": [["costume pet", "text"]]}, "t2"),
            FunctionCallEnvelope("fly_to_moon", {}, "t3"),
            FunctionCallEnvelope("send_message", {"message": "done"}, "t4"),
            FunctionCallEnvelope(
                "conversation_search", {"query": "cheddar", "page": 0}, "t5"
            ),
        ]

    def _state(self, engine):
        return (
            engine.contextual.tag_names(),
            engine.contextual.context_ids(),
            engine.incontext.persona,
            engine.incontext.human,
            [(e.seq, e.role, e.text, e.timestamp) for e in engine.recall.entries()],
            engine.tree_builds,
        )

    def test_replay_is_deterministic(self):
        first = AgentEngine(dim=16)
        second = AgentEngine(dim=16)
        out1 = replay_trace(self._trace(), first)
        out2 = replay_trace(self._trace(), second)
        assert out1 == out2
        assert self._state(first) == self._state(second)

    def test_trace_file_round_trip(self, tmp_path):
        path = tmp_path / "trace.ndjson"
        write_trace(path, self._trace())
        loaded = read_trace(path)
        assert loaded == self._trace()
        engine_a, engine_b = AgentEngine(dim=16), AgentEngine(dim=16)
        assert replay_trace(loaded, engine_a) == replay_trace(self._trace(), engine_b)
