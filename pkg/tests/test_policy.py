import pytest
import requests

from helpers import QueueTransport, make_package, recording_adapter, replay_adapter

from toolsmith.core_tools import core_descriptor_map
from toolsmith.policy import (
    ChatMessage,
    EndpointUnavailable,
    PolicyAdapter,
    PolicyConfig,
    ReplayMiss,
    Transcript,
    assemble_task_prompt,
    digest,
)
from toolsmith.registry import ToolRecord


def history(*contents: str) -> list[ChatMessage]:
    messages = [ChatMessage("system", "sys")]
    for i, content in enumerate(contents):
        messages.append(ChatMessage("user" if i % 2 == 0 else "assistant", content))
    return messages


def test_chat_message_role_validation():
    with pytest.raises(ValueError):
        ChatMessage("narrator", "x")
    with pytest.raises(ValueError):
        ChatMessage("user", None)


def test_digest_is_stable_and_order_sensitive():
    h = history("a", "b")
    assert digest(h) == digest(history("a", "b"))
    assert digest(h) != digest(history("b", "a"))
    # frozen value guards against accidental canonicalization changes;
    # computed as sha256 of '[["system","s"],["user","u"]]'
    assert (
        digest([ChatMessage("system", "s"), ChatMessage("user", "u")])
        == "441b1fb68c37f388d85a1715b6885f0166ec0783dcecd1c518be52dec41b27a6"
    )


def test_transcript_round_trip(tmp_path):
    t = Transcript([("d1", "r1"), ("d2", "r2")])
    path = tmp_path / "t.jsonl"
    t.save(path)
    loaded = Transcript.load(path)
    assert loaded.entries == t.entries
    assert loaded.lookup("d2") == "r2"


def test_transcript_duplicate_digest_rejected():
    t = Transcript()
    t.record("d", "a")
    t.record("d", "a")  # idempotent
    with pytest.raises(ValueError):
        t.record("d", "b")


def test_replay_lookup_and_miss(tmp_path):
    h = history("q")
    t = Transcript([(digest(h), "<answer>ok</answer>")])
    path = tmp_path / "t.jsonl"
    t.save(path)
    adapter = replay_adapter(path)
    assert adapter.complete(h) == "<answer>ok</answer>"
    with pytest.raises(ReplayMiss):
        adapter.complete(history("other"))


def test_replay_mode_requires_transcript():
    with pytest.raises(ValueError):
        PolicyAdapter(PolicyConfig(mode="replay"))


def test_replay_touches_no_network(tmp_path):
    h = history("q")
    t = Transcript([(digest(h), "resp")])
    path = tmp_path / "t.jsonl"
    t.save(path)

    def explode(history, cfg):
        raise AssertionError("transport must not be called in replay mode")

    adapter = PolicyAdapter(
        PolicyConfig(mode="replay", transcript_path=path), transport=explode
    )
    assert adapter.complete(h) == "resp"


def test_record_then_replay_round_trip(tmp_path):
    path = tmp_path / "t.jsonl"
    adapter = recording_adapter(path, ["first", "second"])
    h1, h2 = history("q1"), history("q2")
    assert adapter.complete(h1) == "first"
    assert adapter.complete(h2) == "second"
    replayed = replay_adapter(path)
    assert replayed.complete(h1) == "first"
    assert replayed.complete(h2) == "second"


def test_retry_on_transport_error_then_success():
    calls = {"n": 0}

    def flaky(history, cfg):
        calls["n"] += 1
        if calls["n"] < 3:
            raise requests.ConnectionError("down")
        return "up"

    sleeps: list[float] = []
    adapter = PolicyAdapter(
        PolicyConfig(mode="live", endpoint_url="http://x"),
        transport=flaky,
        sleep=sleeps.append,
    )
    assert adapter.complete(history("q")) == "up"
    assert calls["n"] == 3
    assert sleeps == [0.5, 1.0]


def test_retries_bounded_then_endpoint_unavailable():
    calls = {"n": 0}

    def dead(history, cfg):
        calls["n"] += 1
        raise requests.ConnectionError("down")

    adapter = PolicyAdapter(
        PolicyConfig(mode="live", endpoint_url="http://x"),
        transport=dead,
        sleep=lambda s: None,
    )
    with pytest.raises(EndpointUnavailable):
        adapter.complete(history("q"))
    assert calls["n"] == 3


def test_complete_requires_leading_system_message():
    adapter = PolicyAdapter(PolicyConfig(mode="record"), transport=QueueTransport(["x"]))
    with pytest.raises(ValueError):
        adapter.complete([ChatMessage("user", "hi")])
    with pytest.raises(ValueError):
        adapter.complete([])


def test_temperature_must_be_non_negative():
    with pytest.raises(ValueError):
        PolicyConfig(temperature=-0.1)


# -- prompt assembly -------------------------------------------------------------


def test_prompt_lists_only_core_tools_when_created_empty():
    core = core_descriptor_map()
    messages = assemble_task_prompt(core, {}, "what is 2+2?")
    assert messages[0].role == "system"
    assert messages[-1].role == "user"
    tail = messages[-1].content
    for name in core:
        assert name in tail
    assert "quadratic_solver" not in tail


def test_created_tools_listed_after_core_tools():
    core = core_descriptor_map()
    created = {"quadratic_solver": ToolRecord(package=make_package("quadratic_solver"))}
    tail = assemble_task_prompt(core, created, "solve")[-1].content
    assert "quadratic_solver" in tail
    assert tail.index("quadratic_solver") > max(tail.index(n) for n in core)


def test_prompt_assembly_deterministic():
    core = core_descriptor_map()
    created = {"a_tool": ToolRecord(package=make_package("a_tool"))}
    first = assemble_task_prompt(core, created, "q")
    second = assemble_task_prompt(core, created, "q")
    assert first == second


def test_system_prompt_carries_core_instruction():
    messages = assemble_task_prompt(core_descriptor_map(), {}, "q")
    system = messages[0].content
    assert "Core tools:" in system
    assert "region_crop" in system
    assert "{core_tool_instruction}" not in system
