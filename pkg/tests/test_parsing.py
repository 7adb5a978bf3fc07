import json

import pytest
from hypothesis import given, strategies as st

from toolsmith.parsing import (
    EmptyTurn,
    FinalAnswer,
    MalformedBlock,
    MultipleActions,
    Thought,
    ToolCall,
    ToolInvocation,
    normalize_tool_name,
    parse_turn,
    render_observation,
    serialize_action,
)
from toolsmith.task_loop import Observation


def test_answer_with_think_block():
    turn = parse_turn("<think>x</think><answer>42</answer>")
    assert turn.payload == FinalAnswer("42")
    assert turn.think_blocks == ("x",)


def test_tool_call_block():
    turn = parse_turn('<tool_call>{"name":"calc","arguments":{"a":1}}</tool_call>')
    assert turn.payload == ToolCall(ToolInvocation("calc", {"a": 1}))


def test_two_tool_calls_is_multiple_actions():
    raw = (
        '<tool_call>{"name":"a","arguments":{}}</tool_call>'
        '<tool_call>{"name":"b","arguments":{}}</tool_call>'
    )
    with pytest.raises(MultipleActions):
        parse_turn(raw)


def test_answer_plus_tool_call_fails_loud():
    raw = '<answer>1</answer><tool_call>{"name":"a","arguments":{}}</tool_call>'
    with pytest.raises(MultipleActions):
        parse_turn(raw)


def test_answer_takes_precedence_over_trailing_prose():
    turn = parse_turn("some chatter <answer> 7 </answer> more chatter")
    assert turn.payload == FinalAnswer("7")


def test_free_text_parses_as_thought():
    turn = parse_turn("let me think about this")
    assert turn.payload == Thought("let me think about this")


def test_think_only_turn_is_thought():
    turn = parse_turn("<think>hmm</think>")
    assert turn.payload == Thought("hmm")
    assert turn.think_blocks == ("hmm",)


def test_unknown_tags_are_plain_text():
    turn = parse_turn("<scratchpad>notes</scratchpad>")
    assert isinstance(turn.payload, Thought)
    assert "notes" in turn.payload.text


def test_unclosed_tag_is_malformed():
    with pytest.raises(MalformedBlock):
        parse_turn('<tool_call>{"name":"a","arguments":{}}')
    with pytest.raises(MalformedBlock):
        parse_turn("<answer>unterminated")


def test_empty_turn():
    with pytest.raises(EmptyTurn):
        parse_turn("   \n  ")


def test_bad_argument_object_is_malformed():
    with pytest.raises(MalformedBlock):
        parse_turn("<tool_call>{not json}</tool_call>")
    with pytest.raises(MalformedBlock):
        parse_turn('<tool_call>{"arguments":{}}</tool_call>')
    with pytest.raises(MalformedBlock):
        parse_turn('<tool_call>{"name":"a","arguments":"nope"}</tool_call>')


def test_doubled_brace_template_style_accepted():
    raw = '<tool_call>{{"name": "calc", "arguments": {{"a": 1}}}}</tool_call>'
    turn = parse_turn(raw)
    assert turn.payload == ToolCall(ToolInvocation("calc", {"a": 1}))


def test_missing_arguments_key_defaults_to_empty():
    turn = parse_turn('<tool_call>{"name":"ping"}</tool_call>')
    assert turn.payload == ToolCall(ToolInvocation("ping", {}))


def test_tool_name_normalization():
    assert normalize_tool_name(" Unit-Convert ") == "unit_convert"
    assert normalize_tool_name("Crop 2 Zoom") == "crop_2_zoom"
    turn = parse_turn('<tool_call>{"name":"Region Crop","arguments":{}}</tool_call>')
    assert turn.payload.invocation.name == "region_crop"


def test_parsing_is_pure():
    raw = '<think>a</think><tool_call>{"name":"t","arguments":{"k":[1,2]}}</tool_call>'
    assert parse_turn(raw) == parse_turn(raw)


# -- round-trip property -------------------------------------------------------

_names = st.from_regex(r"[a-z][a-z0-9_]{0,15}", fullmatch=True)
_scalars = st.one_of(
    st.integers(-1000, 1000),
    st.text(st.characters(blacklist_characters="<>{}", blacklist_categories=("Cs",)), max_size=12),
    st.booleans(),
)
_arguments = st.dictionaries(
    _names, st.one_of(_scalars, st.lists(_scalars, max_size=3)), max_size=4
)

_actions = st.one_of(
    st.builds(
        Thought,
        st.text(
            st.characters(blacklist_characters="<>", blacklist_categories=("Cs",)),
            min_size=1,
            max_size=40,
        ).map(str.strip).filter(bool),
    ),
    st.builds(ToolCall, st.builds(ToolInvocation, _names, _arguments)),
    st.builds(
        FinalAnswer,
        st.text(
            st.characters(blacklist_characters="<>", blacklist_categories=("Cs",)),
            max_size=40,
        ).map(str.strip),
    ),
)


@given(_actions)
def test_serialize_parse_round_trip(action):
    if isinstance(action, Thought) and not action.text.strip():
        return
    assert parse_turn(serialize_action(action)).payload == action


@given(st.lists(_actions.filter(lambda a: not isinstance(a, Thought)), min_size=2, max_size=4))
def test_concatenated_actionable_blocks_never_yield_multiple_payloads(actions):
    raw = "\n".join(serialize_action(a) for a in actions)
    with pytest.raises(MultipleActions):
        parse_turn(raw)


# -- observation rendering -----------------------------------------------------


def test_render_observation_ok():
    obs = Observation(tool_name="calc", ok=True, output="7")
    text = render_observation(obs)
    assert "calc" in text and "7" in text


def test_render_observation_error_never_empty():
    obs = Observation(tool_name="calc", ok=False, output="", error_kind="timeout")
    text = render_observation(obs)
    assert text
    assert "failed" in text and "timeout" in text


def test_render_observation_deterministic():
    obs = Observation(tool_name="calc", ok=True, output="7", duration_ms=5)
    same = Observation(tool_name="calc", ok=True, output="7", duration_ms=5)
    assert render_observation(obs) == render_observation(same)


def test_render_observation_truncates_at_cap():
    obs = Observation(tool_name="t", ok=True, output="x" * 5000)
    text = render_observation(obs, cap=100)
    assert "[output truncated]" in text
    assert len(text) < 200


def test_serialize_rejects_create_request():
    from toolsmith.parsing import CreateRequest

    with pytest.raises(ValueError):
        serialize_action(CreateRequest("need a unit converter"))
