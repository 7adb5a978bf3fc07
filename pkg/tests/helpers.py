"""Shared scripted doubles for deterministic tests.

Everything here is designed so a full scenario (record run, then replay runs)
is a pure function of its script: fake clocks stand in for wall time, queue
transports stand in for the endpoint, and fake executors/test runners stand
in for the sandbox.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from toolsmith.build_loop import ToolPackage
from toolsmith.core_tools import validate_args
from toolsmith.policy import PolicyAdapter, PolicyConfig
from toolsmith.sandbox import (
    SandboxResult,
    TestCase,
    TestReport,
    _schema_args,
)


class FakeClock:
    """Monotonically ticking stand-in for time.time."""

    def __init__(self, start: float = 1_700_000_000.0, step: float = 1.0) -> None:
        self.now = start
        self.step = step

    def __call__(self) -> float:
        value = self.now
        self.now += self.step
        return value


class QueueTransport:
    """Adapter transport that pops scripted responses in order."""

    def __init__(self, responses: Sequence[str]) -> None:
        self.responses = list(responses)
        self.calls = 0

    def __call__(self, history, cfg) -> str:
        if not self.responses:
            raise AssertionError(f"transport exhausted after {self.calls} calls")
        self.calls += 1
        return self.responses.pop(0)


def recording_adapter(transcript_path: Path, responses: Sequence[str]) -> PolicyAdapter:
    cfg = PolicyConfig(mode="record", transcript_path=transcript_path)
    return PolicyAdapter(cfg, transport=QueueTransport(responses))


def replay_adapter(transcript_path: Path) -> PolicyAdapter:
    cfg = PolicyConfig(mode="replay", transcript_path=transcript_path)
    return PolicyAdapter(cfg)


def scripted_adapter(responses: Sequence[str]) -> PolicyAdapter:
    """Record-mode adapter with an in-memory transcript; good enough when a
    test does not need replay."""
    cfg = PolicyConfig(mode="record")
    return PolicyAdapter(cfg, transport=QueueTransport(responses))


def passing_report(names: Iterable[str] = ("test_ok",)) -> TestReport:
    return TestReport.from_cases([TestCase(n, "pass", "", 1) for n in names])


def failing_report(
    names: Iterable[str] = ("test_broken",), message: str = "assertion failed"
) -> TestReport:
    return TestReport.from_cases([TestCase(n, "fail", message, 1) for n in names])


class FakeTestRunner:
    """Pops scripted reports in call order."""

    def __init__(self, reports: Sequence[TestReport]) -> None:
        self.reports = list(reports)
        self.runs: list[tuple[str, str]] = []

    def run(self, code: str, test_script: str) -> TestReport:
        self.runs.append((code, test_script))
        if not self.reports:
            raise AssertionError("test runner script exhausted")
        return self.reports.pop(0)


class FakeExecutor:
    """Deterministic created-tool executor: output per tool name, either a
    static string or a callable over the argument map."""

    def __init__(
        self, outputs: Optional[Mapping[str, Any]] = None, duration_ms: int = 3
    ) -> None:
        self.outputs = dict(outputs or {})
        self.duration_ms = duration_ms
        self.calls: list[tuple[str, dict]] = []

    def execute(self, pkg: ToolPackage, args: Mapping[str, Any]) -> SandboxResult:
        validate_args(_schema_args(pkg.invocation_schema), args)
        self.calls.append((pkg.name, dict(args)))
        spec = self.outputs.get(pkg.name, "ok")
        output = spec(args) if callable(spec) else str(spec)
        return SandboxResult(
            exit_code=0,
            stdout=output + "\n",
            stderr="",
            timed_out=False,
            duration_ms=self.duration_ms,
        )


def make_package(
    name: str,
    description: str = "",
    args: Optional[Mapping[str, Mapping[str, Any]]] = None,
    code: Optional[str] = None,
    deps: Sequence[str] = (),
    created_from: str = "fixture:t0",
    created_at: float = 1_700_000_000.0,
    test_script: str = "def test_ok():\n    assert True\n",
) -> ToolPackage:
    description = description or f"{name} fixture tool"
    if args is None:
        args = {"x": {"type": "string", "required": True, "description": ""}}
    args = dict(args)
    if code is None:
        lines = [f"# tool-description: {description}"]
        for arg_name, info in args.items():
            req = "required" if info.get("required", True) else "optional"
            lines.append(f"# tool-arg: {arg_name} {info.get('type', 'string')} {req}")
        lines += ["", f"def {name}(**kwargs):", "    return kwargs", ""]
        code = "\n".join(lines)
    return ToolPackage(
        name=name,
        version=1,
        code=code,
        invocation_schema={"description": description, "args": args},
        dependencies=tuple(deps),
        test_results=passing_report(),
        created_from=created_from,
        created_at=created_at,
        test_script=test_script,
    )


def tool_call(name: str, arguments: Mapping[str, Any]) -> str:
    body = json.dumps({"name": name, "arguments": dict(arguments)})
    return f"<tool_call>{body}</tool_call>"


def answer(text: str) -> str:
    return f"<answer>{text}</answer>"


def builder_response(
    name: str,
    description: str = "computes things",
    arg_lines: Sequence[str] = ("# tool-arg: n integer required the input",),
    body: str = "    return n",
    extra_code: str = "",
    test_body: str = "def test_basic():\n    assert True",
) -> str:
    """A builder turn carrying the two artifacts in the expected format."""
    manifest = "\n".join([f"# tool-description: {description}", *arg_lines])
    code = f"{manifest}\n\ndef {name}(n=0, **kwargs):\n{body}\n{extra_code}"
    return (
        "<think>plan</think>\n"
        f'<artifact identifier="tool" type="text/x-python" path="tool.py" action="create">\n'
        f"{code}\n</artifact>\n"
        f'<artifact identifier="tests" type="text/x-python" path="test_tool.py" action="create">\n'
        f"{test_body}\n</artifact>"
    )


def critic_verdict(
    score: int,
    approved: bool,
    suggestions: Sequence[str] = (),
    blocking: Sequence[str] = (),
) -> str:
    verdict = {
        "score": score,
        "approved": approved,
        "suggestions": list(suggestions),
        "blocking_issues": list(blocking),
    }
    return "<think>review</think>\n```json\n" + json.dumps(verdict) + "\n```"


def registry_snapshot(root: Path) -> dict[str, str]:
    """Relative path -> sha256 of every file under a registry root."""
    import hashlib

    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            out[str(path.relative_to(root))] = digest
    return out


def registry_diff(before: Mapping[str, str], after: Mapping[str, str]) -> dict[str, Any]:
    return {
        "added": {k: v for k, v in after.items() if k not in before},
        "modified": {
            k: v for k, v in after.items() if k in before and before[k] != v
        },
        "removed": sorted(k for k in before if k not in after),
    }
