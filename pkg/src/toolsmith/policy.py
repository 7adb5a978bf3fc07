"""Chat-completion adapter for the policy model and its personas.

The model itself is an opaque remote endpoint. Every call site goes through
``PolicyAdapter.complete``, which supports three modes:

* ``live``    - POST the message history to the configured endpoint.
* ``record``  - live, plus append (digest(history), response) to a transcript.
* ``replay``  - answer purely from a transcript; touches no network.

The digest is a sha256 over a canonical serialization of the history, so any
prompt drift between a recording and a replay surfaces as a ReplayMiss rather
than a silently different conversation.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import requests

from .core_tools import ArgSpec, ToolDescriptor
from .prompts import (
    CREATE_TOOL_DESCRIPTION,
    CREATE_TOOL_NAME,
    POLICY_SYSTEM_PROMPT,
)

ROLES = ("system", "user", "assistant", "tool")


class EndpointUnavailable(RuntimeError):
    """Transport-level failure that persisted through bounded retries."""


class ReplayMiss(LookupError):
    """Replay mode has no recorded response for the requested history."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.content is None:
            raise ValueError("content must not be null")


def digest(history: Sequence[ChatMessage]) -> str:
    """Stable digest of a message list; identical across runs and platforms."""
    canonical = json.dumps(
        [[m.role, m.content] for m in history],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Transcript:
    """Ordered (digest, response) pairs with exact-match lookup.

    File format: UTF-8 lines, one JSON object per line with ``digest`` and
    ``response`` keys.
    """

    def __init__(self, entries: Iterable[tuple[str, str]] = ()) -> None:
        self.entries: list[tuple[str, str]] = []
        self._index: dict[str, str] = {}
        for d, response in entries:
            self.record(d, response)

    def record(self, d: str, response: str) -> None:
        if d in self._index:
            if self._index[d] == response:
                return
            raise ValueError(f"digest {d} already recorded with a different response")
        self.entries.append((d, response))
        self._index[d] = response

    def lookup(self, d: str) -> str:
        try:
            return self._index[d]
        except KeyError:
            raise ReplayMiss(f"no recorded response for digest {d}") from None

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, path: Path | str) -> "Transcript":
        transcript = cls()
        text = Path(path).read_text(encoding="utf-8")
        for line in text.splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            transcript.record(record["digest"], record["response"])
        return transcript

    def save(self, path: Path | str) -> None:
        lines = [
            json.dumps({"digest": d, "response": r}, ensure_ascii=False)
            for d, r in self.entries
        ]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass
class PolicyConfig:
    endpoint_url: str = ""
    model_name: str = ""
    temperature: float = 1.0
    max_rounds_hint: int = 12
    mode: str = "replay"
    transcript_path: Optional[Path] = None
    timeout_s: float = 120.0
    max_attempts: int = 3
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.mode not in ("live", "replay", "record"):
            raise ValueError(f"unknown mode {self.mode!r}")


Transport = Callable[[Sequence[ChatMessage], "PolicyConfig"], str]


def http_transport(history: Sequence[ChatMessage], cfg: PolicyConfig) -> str:
    """Single POST against a chat-completion endpoint; raises
    requests.RequestException on transport problems."""
    response = requests.post(
        cfg.endpoint_url,
        json={
            "model": cfg.model_name,
            "messages": [{"role": m.role, "content": m.content} for m in history],
            "temperature": cfg.temperature,
        },
        timeout=cfg.timeout_s,
    )
    response.raise_for_status()
    payload = response.json()
    try:
        return payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointUnavailable(f"malformed completion payload: {exc}") from exc


class PolicyAdapter:
    """One adapter, many personas: the task loop, builder and critic all call
    ``complete`` with their own system messages.

    Thread-safe; transcript appends are serialized internally.
    """

    def __init__(
        self,
        cfg: PolicyConfig,
        *,
        transcript: Optional[Transcript] = None,
        transport: Optional[Transport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.cfg = cfg
        self._transport = transport or http_transport
        self._sleep = sleep
        self._lock = threading.Lock()
        if transcript is not None:
            self.transcript = transcript
        elif cfg.mode == "replay":
            if cfg.transcript_path is None:
                raise ValueError("replay mode requires a transcript path")
            self.transcript = Transcript.load(cfg.transcript_path)
        else:
            self.transcript = Transcript()

    def complete(self, history: Sequence[ChatMessage]) -> str:
        if not history:
            raise ValueError("history must not be empty")
        if history[0].role != "system":
            raise ValueError("history must begin with a system message")
        d = digest(history)
        if self.cfg.mode == "replay":
            return self.transcript.lookup(d)
        text = self._call_with_retry(history)
        if self.cfg.mode == "record":
            with self._lock:
                self.transcript.record(d, text)
                if self.cfg.transcript_path is not None:
                    with open(self.cfg.transcript_path, "a", encoding="utf-8") as fh:
                        fh.write(
                            json.dumps(
                                {"digest": d, "response": text}, ensure_ascii=False
                            )
                            + "\n"
                        )
        return text

    def _call_with_retry(self, history: Sequence[ChatMessage]) -> str:
        # Retries cover transport failures only; a well-formed model response
        # is never re-requested, which keeps record/replay deterministic.
        last_error: Exception | None = None
        for attempt in range(self.cfg.max_attempts):
            try:
                return self._transport(history, self.cfg)
            except requests.RequestException as exc:
                last_error = exc
                if attempt + 1 < self.cfg.max_attempts:
                    self._sleep(self.cfg.backoff_s * (2**attempt))
        raise EndpointUnavailable(
            f"endpoint failed after {self.cfg.max_attempts} attempts: {last_error}"
        )


def _schema_line(name: str, spec: ArgSpec) -> str:
    parts = [f"{name}: {spec.type}"]
    parts.append("required" if spec.required else "optional")
    if spec.enum is not None:
        parts.append("one of {" + ", ".join(spec.enum) + "}")
    if spec.description:
        parts.append(spec.description)
    return "; ".join(parts)


def describe_tool(name: str, description: str, schema: Mapping[str, ArgSpec]) -> str:
    lines = [f"- {name}: {description}"]
    for arg_name in schema:
        lines.append(f"    {_schema_line(arg_name, schema[arg_name])}")
    return "\n".join(lines)


def _core_instruction(core: Mapping[str, ToolDescriptor]) -> str:
    lines = ["Core tools:"]
    for descriptor in core.values():
        lines.append(describe_tool(descriptor.name, descriptor.description, descriptor.schema))
    return "\n".join(lines)


def render_tool_listing(
    core: Mapping[str, ToolDescriptor],
    created: Mapping[str, object],
) -> str:
    """Available-tool list for the user message tail: core tools first, then
    created tools sorted by name, then the tool-creation meta action."""
    lines = ["Available tools:"]
    for descriptor in core.values():
        lines.append(describe_tool(descriptor.name, descriptor.description, descriptor.schema))
    for name in sorted(created):
        entry = created[name]
        package = getattr(entry, "package", entry)
        schema = _package_arg_specs(package)
        lines.append(describe_tool(name, _package_description(package), schema))
    lines.append(
        describe_tool(
            CREATE_TOOL_NAME,
            CREATE_TOOL_DESCRIPTION,
            {
                "requirement": ArgSpec("string", description="what the new tool must do"),
                "name": ArgSpec("string", required=False, description="suggested tool name"),
            },
        )
    )
    return "\n".join(lines)


def _package_description(package: object) -> str:
    schema = getattr(package, "invocation_schema", None)
    if isinstance(schema, Mapping):
        return str(schema.get("description", ""))
    return str(getattr(package, "description", ""))


def _package_arg_specs(package: object) -> dict[str, ArgSpec]:
    schema = getattr(package, "invocation_schema", None)
    if not isinstance(schema, Mapping):
        return {}
    args = schema.get("args", {})
    specs: dict[str, ArgSpec] = {}
    for arg_name, info in args.items():
        specs[arg_name] = ArgSpec(
            type=str(info.get("type", "string")),
            required=bool(info.get("required", True)),
            description=str(info.get("description", "")),
        )
    return specs


def assemble_task_prompt(
    core: Mapping[str, ToolDescriptor],
    created: Mapping[str, object],
    query: str = "",
) -> list[ChatMessage]:
    """System message plus the user message carrying the query with the
    available-tool list appended at its end."""
    system = POLICY_SYSTEM_PROMPT.format(core_tool_instruction=_core_instruction(core))
    user = (query.strip() + "\n\n" if query.strip() else "") + render_tool_listing(
        core, created
    )
    return [ChatMessage("system", system), ChatMessage("user", user)]
