"""Parsing of policy-model turns into structured actions.

A turn may contain any number of ``<think>...</think>`` blocks plus at most
one actionable block: either a ``<tool_call>`` carrying a JSON object literal
with ``name`` and ``arguments`` keys, or an ``<answer>`` block. Anything
outside recognized tags (including unknown tags) is treated as plain thought
text, which keeps the loop alive so the caller can nudge the model back into
format.

All functions here are pure; the module holds no state.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Union


class ParseError(ValueError):
    """Base class for turn-parsing failures."""


class MultipleActions(ParseError):
    """More than one tool_call/answer block in a single turn."""


class MalformedBlock(ParseError):
    """A tag was opened but never closed, or an argument object is unparseable."""


class EmptyTurn(ParseError):
    """No recognized block and no free text."""


TOOL_NAME_CHARS = re.compile(r"^[a-z0-9_]+$")

_TAGS = ("think", "tool_call", "answer")
_BLOCK_RE = {tag: re.compile(rf"<{tag}>(.*?)</{tag}>", re.DOTALL) for tag in _TAGS}
_OPEN_RE = {tag: re.compile(rf"<{tag}>") for tag in _TAGS}


@dataclass(frozen=True)
class ToolInvocation:
    name: str
    arguments: dict[str, Any]


@dataclass(frozen=True)
class Thought:
    text: str


@dataclass(frozen=True)
class ToolCall:
    invocation: ToolInvocation


@dataclass(frozen=True)
class CreateRequest:
    """Explicit request to build a new tool; produced by the task loop, not
    by the grammar (it has no tag of its own)."""

    ticket_draft: str


@dataclass(frozen=True)
class FinalAnswer:
    text: str


AgentAction = Union[Thought, ToolCall, CreateRequest, FinalAnswer]


@dataclass(frozen=True)
class ModelTurn:
    raw_text: str
    think_blocks: tuple[str, ...]
    payload: AgentAction


def normalize_tool_name(name: str) -> str:
    """Lower-case and map separators to underscores; strip anything outside
    [a-z0-9_]."""
    slug = re.sub(r"[\s\-.]+", "_", name.strip().lower())
    slug = re.sub(r"[^a-z0-9_]", "", slug)
    slug = re.sub(r"_+", "_", slug).strip("_")
    return slug


def _loads_lenient(body: str) -> Any:
    """Decode a tool_call body, accepting both plain JSON and the doubled-brace
    template style some models copy verbatim from their instructions."""
    body = body.strip()
    try:
        return json.loads(body)
    except json.JSONDecodeError:
        pass
    if "{{" in body:
        try:
            return json.loads(body.replace("{{", "{").replace("}}", "}"))
        except json.JSONDecodeError:
            pass
    raise MalformedBlock("tool_call body is not a parseable object literal")


def _parse_invocation(body: str) -> ToolInvocation:
    obj = _loads_lenient(body)
    if not isinstance(obj, dict):
        raise MalformedBlock("tool_call body must be an object literal")
    raw_name = obj.get("name")
    if not isinstance(raw_name, str) or not raw_name.strip():
        raise MalformedBlock("tool_call requires a non-empty string 'name'")
    name = normalize_tool_name(raw_name)
    if not TOOL_NAME_CHARS.match(name or ""):
        raise MalformedBlock(f"tool name {raw_name!r} is not a valid identifier")
    arguments = obj.get("arguments", {})
    if not isinstance(arguments, dict):
        raise MalformedBlock("'arguments' must be an object")
    return ToolInvocation(name=name, arguments=arguments)


def parse_turn(raw: str) -> ModelTurn:
    """Parse one complete model response into a ModelTurn.

    Raises MultipleActions if more than one tool_call/answer block is present,
    MalformedBlock on unclosed tags or undecodable argument objects, and
    EmptyTurn when there is nothing to parse at all.
    """
    if raw is None or not raw.strip():
        raise EmptyTurn("turn contains no content")

    think_blocks = tuple(m.group(1).strip() for m in _BLOCK_RE["think"].finditer(raw))
    remainder = _BLOCK_RE["think"].sub("", raw)

    tool_bodies = [m.group(1) for m in _BLOCK_RE["tool_call"].finditer(remainder)]
    answer_bodies = [m.group(1) for m in _BLOCK_RE["answer"].finditer(remainder)]
    stripped = _BLOCK_RE["answer"].sub("", _BLOCK_RE["tool_call"].sub("", remainder))

    for tag in _TAGS:
        if _OPEN_RE[tag].search(stripped):
            raise MalformedBlock(f"<{tag}> opened but never closed")

    actionable = len(tool_bodies) + len(answer_bodies)
    if actionable > 1:
        raise MultipleActions(
            f"turn contains {actionable} actionable blocks; exactly one is allowed"
        )

    payload: AgentAction
    if answer_bodies:
        payload = FinalAnswer(answer_bodies[0].strip())
    elif tool_bodies:
        payload = ToolCall(_parse_invocation(tool_bodies[0]))
    else:
        free_text = stripped.strip()
        if not free_text and not think_blocks:
            raise EmptyTurn("no recognized block and no text")
        payload = Thought(free_text or "\n\n".join(think_blocks).strip())

    return ModelTurn(raw_text=raw, think_blocks=think_blocks, payload=payload)


def serialize_action(action: AgentAction) -> str:
    """Render an action back into turn text. Inverse of parse_turn on the
    grammar's three surface forms; CreateRequest has no surface form of its
    own and is rejected."""
    if isinstance(action, Thought):
        return action.text
    if isinstance(action, ToolCall):
        body = json.dumps(
            {"name": action.invocation.name, "arguments": action.invocation.arguments},
            ensure_ascii=False,
        )
        return f"<tool_call>\n{body}\n</tool_call>"
    if isinstance(action, FinalAnswer):
        return f"<answer>{action.text}</answer>"
    raise ValueError(f"{type(action).__name__} has no turn-text form")


DEFAULT_OBSERVATION_CAP = 4096
TRUNCATION_MARKER = "\n...[output truncated]"


def render_observation(obs: Any, cap: int = DEFAULT_OBSERVATION_CAP) -> str:
    """Render a tool observation as message text.

    Deterministic and byte-identical for equal observations. Durations are
    deliberately left out: rendered text feeds the next prompt digest, which
    must not depend on wall-clock timing.
    """
    body = obs.output or ""
    if len(body) > cap:
        body = body[:cap] + TRUNCATION_MARKER
    if obs.ok:
        return f"Tool '{obs.tool_name}' returned:\n{body}"
    reason = obs.error_kind or "error"
    rendered = f"Tool '{obs.tool_name}' failed ({reason})."
    if body:
        rendered += "\n" + body
    return rendered
