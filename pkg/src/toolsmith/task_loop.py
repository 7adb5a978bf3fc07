"""The online reasoning loop: complete, parse, route, observe, repeat.

Each round makes one policy call and performs at most one action. Tool calls
are routed by source: core tools run against their backends, created tools
run through the executor (and land in the usage log), and calls to tools that
do not exist raise a build ticket, run the build loop, then execute the fresh
tool within the same round. A tool failure never ends the loop; it comes back
as an error observation and the model decides what to do next. The loop stops
on a final answer, on round exhaustion (after one forced-answer prompt with
no tools offered), or on hard adapter/parser failure.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional, TextIO

from .build_loop import BuildError, BuildExhausted, make_ticket
from .core_tools import SchemaViolation, ToolBackendError
from .parsing import (
    CreateRequest,
    FinalAnswer,
    ParseError,
    Thought,
    ToolCall,
    parse_turn,
    render_observation,
)
from .policy import ChatMessage, EndpointUnavailable, ReplayMiss, assemble_task_prompt
from .prompts import (
    CREATE_TOOL_NAME,
    FORCED_ANSWER_PROMPT,
    FORMAT_RETRY_PROMPT,
    THOUGHT_CONTINUE_PROMPT,
)
from .registry import ToolMemory
from .sandbox import SandboxResult, SpawnFailure

MAX_CONSECUTIVE_PARSE_FAILURES = 3


class ToolSource(Enum):
    CORE = "core"
    CREATED = "created"
    MISSING = "missing"


def identify_tool_source(name: str, memory: ToolMemory) -> ToolSource:
    """Core membership shadows created tools on a name collision."""
    if name in memory.core:
        return ToolSource.CORE
    if name in memory.created:
        return ToolSource.CREATED
    return ToolSource.MISSING


@dataclass(frozen=True)
class Observation:
    tool_name: str
    ok: bool
    output: str
    error_kind: Optional[str] = None
    duration_ms: int = 0

    def __post_init__(self) -> None:
        if self.ok == (self.error_kind is not None):
            raise ValueError("exactly one of ok / error_kind must hold")


@dataclass
class TaskConfig:
    max_rounds: int = 12
    observation_cap: int = 4096
    task_id: str = ""


@dataclass
class TaskState:
    history: list[ChatMessage]
    round: int = 0
    last_observation: Optional[Observation] = None
    status: str = "running"


@dataclass(frozen=True)
class TaskResult:
    answer: Optional[str]
    status: str
    rounds_used: int
    tools_invoked: tuple[tuple[str, bool], ...]
    tickets_raised: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "answer": self.answer,
            "status": self.status,
            "rounds_used": self.rounds_used,
            "tools_invoked": [[name, ok] for name, ok in self.tools_invoked],
            "tickets_raised": list(self.tickets_raised),
        }


class TaskRunner:
    """One runner per task execution thread; several runners may share one
    registry (reads are concurrent, registration is serialized there)."""

    def __init__(
        self,
        adapter: Any,
        registry: Any,
        core_tools: Any,
        executor: Any,
        builder: Any = None,
        cfg: TaskConfig | None = None,
        log_stream: Optional[TextIO] = None,
    ) -> None:
        self.adapter = adapter
        self.registry = registry
        self.core_tools = core_tools
        self.executor = executor
        self.builder = builder
        self.cfg = cfg or TaskConfig()
        self.log_stream = log_stream
        self.run_log: list[dict[str, Any]] = []
        self._tools_invoked: list[tuple[str, bool]] = []
        self._tickets: list[str] = []
        self._ticket_seq = 0
        self._task_id = ""

    # -- logging ------------------------------------------------------------

    def _log(
        self,
        round_no: int,
        action: str,
        tool: Optional[str] = None,
        ok: Optional[bool] = None,
        duration_ms: Optional[int] = None,
    ) -> None:
        record = {
            "round": round_no,
            "action": action,
            "tool": tool,
            "ok": ok,
            "duration_ms": duration_ms,
        }
        self.run_log.append(record)
        if self.log_stream is not None:
            self.log_stream.write(json.dumps(record, sort_keys=True) + "\n")

    # -- main loop ------------------------------------------------------------

    def run_task(self, query: str) -> TaskResult:
        self._task_id = self.cfg.task_id or f"task-{uuid.uuid4().hex[:8]}"
        self._tools_invoked = []
        self._tickets = []
        self._ticket_seq = 0
        self.run_log = []
        memory = self.registry.snapshot()
        state = TaskState(
            history=assemble_task_prompt(memory.core, memory.created, query)
        )
        parse_failures = 0
        while state.round < self.cfg.max_rounds:
            state.round += 1
            try:
                text = self.adapter.complete(state.history)
            except (EndpointUnavailable, ReplayMiss) as exc:
                state.status = "aborted"
                self._log(state.round, "policy_failure", ok=False)
                return self._result(state, answer=None, note=str(exc))
            try:
                turn = parse_turn(text)
            except ParseError as exc:
                parse_failures += 1
                state.history.append(ChatMessage("assistant", text))
                state.history.append(
                    ChatMessage(
                        "user",
                        FORMAT_RETRY_PROMPT.format(reason=type(exc).__name__),
                    )
                )
                self._log(state.round, "parse_error")
                if parse_failures >= MAX_CONSECUTIVE_PARSE_FAILURES:
                    state.status = "aborted"
                    return self._result(state, answer=None, note=str(exc))
                continue
            parse_failures = 0
            state.history.append(ChatMessage("assistant", text))
            payload = turn.payload

            if isinstance(payload, FinalAnswer):
                state.status = "answered"
                self._log(state.round, "answer")
                return self._result(state, answer=payload.text)

            if isinstance(payload, Thought):
                state.history.append(ChatMessage("user", THOUGHT_CONTINUE_PROMPT))
                self._log(state.round, "thought")
                continue

            assert isinstance(payload, ToolCall)
            observation = self._perform_tool_call(payload, state)
            state.last_observation = observation
            state.history.append(
                ChatMessage(
                    "tool", render_observation(observation, self.cfg.observation_cap)
                )
            )
        return self.handle_round_exhaustion(state)

    # -- routing ------------------------------------------------------------

    def _perform_tool_call(self, payload: ToolCall, state: TaskState) -> Observation:
        invocation = payload.invocation
        if invocation.name == CREATE_TOOL_NAME:
            request = CreateRequest(
                ticket_draft=str(
                    invocation.arguments.get("requirement")
                    or invocation.arguments.get("name")
                    or "unspecified tool"
                )
            )
            return self._build_missing(request, state, execute_args=None)
        source = identify_tool_source(invocation.name, self.registry.snapshot())
        if source is ToolSource.CORE:
            return self._execute_core(invocation, state)
        if source is ToolSource.CREATED:
            record = self.registry.lookup_created(invocation.name)
            return self._execute_created(
                record.package, invocation.arguments, state
            )
        return self._build_missing(payload.invocation, state, execute_args=invocation.arguments)

    def _execute_core(self, invocation: Any, state: TaskState) -> Observation:
        started = time.perf_counter()
        try:
            output = self.core_tools.dispatch(invocation.name, invocation.arguments)
            observation = Observation(
                tool_name=invocation.name,
                ok=True,
                output=output,
                duration_ms=int((time.perf_counter() - started) * 1000),
            )
        except (ToolBackendError, SchemaViolation, KeyError) as exc:
            observation = Observation(
                tool_name=invocation.name,
                ok=False,
                output=str(exc),
                error_kind=type(exc).__name__,
                duration_ms=int((time.perf_counter() - started) * 1000),
            )
        self._note_invocation(state.round, observation)
        return observation

    def _execute_created(
        self, package: Any, arguments: dict[str, Any], state: TaskState
    ) -> Observation:
        try:
            result: SandboxResult = self.executor.execute(package, arguments)
        except SchemaViolation as exc:
            observation = Observation(
                tool_name=package.name,
                ok=False,
                output=str(exc),
                error_kind="schema_violation",
            )
        except SpawnFailure as exc:
            observation = Observation(
                tool_name=package.name,
                ok=False,
                output=str(exc),
                error_kind="spawn_failure",
            )
        else:
            ok = result.exit_code == 0 and not result.timed_out
            observation = Observation(
                tool_name=package.name,
                ok=ok,
                output=result.stdout.strip() if ok else (result.stderr or result.stdout).strip(),
                error_kind=None if ok else ("timeout" if result.timed_out else "nonzero_exit"),
                duration_ms=result.duration_ms,
            )
        self.registry.record_usage(
            package.name, self._task_id, observation.ok, observation.duration_ms
        )
        self._note_invocation(state.round, observation)
        return observation

    def _build_missing(
        self,
        missing: Any,
        state: TaskState,
        execute_args: Optional[dict[str, Any]],
    ) -> Observation:
        """Raise a ticket, run the build loop, and (for implicit requests)
        execute the new tool with the original arguments."""
        self._ticket_seq += 1
        context = "\n".join(
            m.content for m in state.history if m.role in ("user", "tool")
        )
        ticket = make_ticket(
            context, missing, origin_task=self._task_id, seq=self._ticket_seq
        )
        self._tickets.append(ticket.id)
        self._log(state.round, "ticket", tool=ticket.proposed_name)
        if self.builder is None:
            return Observation(
                tool_name=ticket.proposed_name,
                ok=False,
                output="tool creation failed: no builder configured",
                error_kind="build_failure",
            )
        try:
            package = self.builder.run_build(ticket)
        except (BuildError, BuildExhausted) as exc:
            self._log(state.round, "build_failed", tool=ticket.proposed_name, ok=False)
            return Observation(
                tool_name=ticket.proposed_name,
                ok=False,
                output=f"tool creation failed: {exc}",
                error_kind="build_failure",
            )
        self._log(state.round, "build_registered", tool=package.name, ok=True)
        if execute_args is None:
            return Observation(
                tool_name=package.name,
                ok=True,
                output=(
                    f"created tool '{package.name}': {package.description} "
                    f"(arguments: {', '.join(package.invocation_schema.get('args', {})) or 'none'})"
                ),
            )
        return self._execute_created(package, execute_args, state)

    def _note_invocation(self, round_no: int, observation: Observation) -> None:
        self._tools_invoked.append((observation.tool_name, observation.ok))
        self._log(
            round_no,
            "tool_call",
            tool=observation.tool_name,
            ok=observation.ok,
            duration_ms=observation.duration_ms,
        )

    # -- termination ------------------------------------------------------------

    def handle_round_exhaustion(self, state: TaskState) -> TaskResult:
        """One last forced-answer prompt with no tools offered; anything but a
        final answer leaves the task exhausted."""
        state.history.append(ChatMessage("user", FORCED_ANSWER_PROMPT))
        state.round += 1
        try:
            text = self.adapter.complete(state.history)
            state.history.append(ChatMessage("assistant", text))
            turn = parse_turn(text)
        except (EndpointUnavailable, ReplayMiss, ParseError):
            state.status = "exhausted"
            self._log(state.round, "exhausted")
            return self._result(state, answer=None)
        if isinstance(turn.payload, FinalAnswer):
            state.status = "answered"
            self._log(state.round, "forced_answer")
            return self._result(state, answer=turn.payload.text)
        state.status = "exhausted"
        self._log(state.round, "exhausted")
        return self._result(state, answer=None)

    def _result(
        self, state: TaskState, answer: Optional[str], note: str = ""
    ) -> TaskResult:
        return TaskResult(
            answer=answer if state.status == "answered" else None,
            status=state.status,
            rounds_used=state.round,
            tools_invoked=tuple(self._tools_invoked),
            tickets_raised=tuple(self._tickets),
        )
