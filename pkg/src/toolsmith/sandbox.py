"""Isolated child-process execution of tool code and test scripts.

Isolation model: separate process, private per-execution working directory,
resource limits (CPU/memory via rlimits where available), wall-clock timeout
enforced from the parent, and a best-effort network block inside the child.
OS-level containers can be layered on top but are not required here.

Test runs speak a line protocol on stdout: every record line starts with
``RECORD_PREFIX`` followed by a single-line JSON object. Case records carry
``test``, ``status``, ``duration_ms`` and ``message``; the final summary
record carries ``all_pass`` and ``cases``. The harness process exits 0 iff
all tests passed, 1 on test failures, 2 on harness-internal errors.
"""

from __future__ import annotations

import json
import os
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .core_tools import SchemaViolation, validate_args, ArgSpec

try:
    import resource
except ImportError:  # pragma: no cover - non-POSIX platforms
    resource = None  # type: ignore[assignment]


class SpawnFailure(RuntimeError):
    pass


class SandboxUnavailable(RuntimeError):
    pass


class HarnessProtocolError(RuntimeError):
    """The report stream could not be interpreted; surfaced to callers as a
    synthetic error case rather than raised."""


RECORD_PREFIX = "@@RESULT@@ "
STREAM_CAP = 65536
STREAM_TRUNCATION_MARKER = "\n...[stream truncated]"

STATUSES = ("pass", "fail", "error", "timeout")


@dataclass
class SandboxSpec:
    interpreter_command: tuple[str, ...] = (sys.executable,)
    timeout_ms: int = 30_000
    memory_cap_bytes: int = 512 * 1024 * 1024
    workdir: Optional[Path] = None
    network_allowed: bool = False
    # Entry command for the in-sandbox test harness, e.g. (python, harness.py).
    # It is part of the sandbox image, not of this package.
    harness_command: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")


@dataclass(frozen=True)
class SandboxResult:
    exit_code: int
    stdout: str
    stderr: str
    timed_out: bool
    duration_ms: int


@dataclass(frozen=True)
class TestCase:
    name: str
    status: str
    message: str = ""
    duration_ms: int = 0


@dataclass(frozen=True)
class TestReport:
    cases: tuple[TestCase, ...]
    all_pass: bool
    diagnostics: str = ""

    @classmethod
    def from_cases(cls, cases: Sequence[TestCase], diagnostics: str = "") -> "TestReport":
        cases = tuple(cases)
        return cls(
            cases=cases,
            all_pass=bool(cases) and all(c.status == "pass" for c in cases),
            diagnostics=diagnostics,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "all_pass": self.all_pass,
            "cases": [
                {
                    "name": c.name,
                    "status": c.status,
                    "message": c.message,
                    "duration_ms": c.duration_ms,
                }
                for c in self.cases
            ],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TestReport":
        return cls(
            cases=tuple(
                TestCase(
                    name=c["name"],
                    status=c["status"],
                    message=c.get("message", ""),
                    duration_ms=int(c.get("duration_ms", 0)),
                )
                for c in data.get("cases", [])
            ),
            all_pass=bool(data.get("all_pass", False)),
            diagnostics=data.get("diagnostics", ""),
        )


def _cap_stream(text: str) -> str:
    if len(text) > STREAM_CAP:
        return text[:STREAM_CAP] + STREAM_TRUNCATION_MARKER
    return text


def _limit_preexec(spec: SandboxSpec):
    if resource is None:
        return None
    cpu_seconds = max(1, spec.timeout_ms // 1000 + 1)
    memory = spec.memory_cap_bytes

    def set_limits() -> None:  # pragma: no cover - runs in the child
        try:
            resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds + 2))
        except (ValueError, OSError):
            pass
        try:
            resource.setrlimit(resource.RLIMIT_AS, (memory, memory))
        except (ValueError, OSError):
            pass

    return set_limits


def _launch(argv: Sequence[str], spec: SandboxSpec, workdir: Path) -> SandboxResult:
    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "HOME": str(workdir),
        "PYTHONDONTWRITEBYTECODE": "1",
        "PYTHONIOENCODING": "utf-8",
    }
    if not spec.network_allowed:
        env["SANDBOX_NO_NET"] = "1"
    started = time.perf_counter()
    try:
        process = subprocess.Popen(
            list(argv),
            cwd=str(workdir),
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            preexec_fn=_limit_preexec(spec),
        )
    except OSError as exc:
        raise SpawnFailure(f"could not launch {argv[0]!r}: {exc}") from exc
    timed_out = False
    try:
        out, err = process.communicate(timeout=spec.timeout_ms / 1000.0)
    except subprocess.TimeoutExpired:
        timed_out = True
        process.kill()
        out, err = process.communicate()
    duration_ms = int((time.perf_counter() - started) * 1000)
    exit_code = process.returncode
    if timed_out and exit_code == 0:
        exit_code = -1  # nonzero by convention when killed at the deadline
    return SandboxResult(
        exit_code=exit_code,
        stdout=_cap_stream(out.decode("utf-8", errors="replace")),
        stderr=_cap_stream(err.decode("utf-8", errors="replace")),
        timed_out=timed_out,
        duration_ms=duration_ms,
    )


# The driver reads the serialized argument object from a file, never from the
# command line, and blocks socket use unless networking was allowed.
DRIVER_SOURCE = '''\
import json, os, sys

code_path, args_path, entry = sys.argv[1], sys.argv[2], sys.argv[3]

if os.environ.get("SANDBOX_NO_NET") == "1":
    import socket

    def _blocked(*args, **kwargs):
        raise OSError("network access is disabled in this sandbox")

    socket.socket = _blocked
    socket.create_connection = _blocked

namespace = {"__name__": "__tool__"}
with open(code_path, "r", encoding="utf-8") as fh:
    source = fh.read()
exec(compile(source, code_path, "exec"), namespace)

with open(args_path, "r", encoding="utf-8") as fh:
    arguments = json.load(fh)

fn = namespace.get(entry)
if not callable(fn):
    fn = namespace.get("run")
if not callable(fn):
    sys.stderr.write("tool entry point %r (or 'run') not found\\n" % entry)
    sys.exit(3)

result = fn(**arguments)
if result is not None:
    if isinstance(result, str):
        sys.stdout.write(result)
    else:
        sys.stdout.write(json.dumps(result, ensure_ascii=False, default=repr))
    sys.stdout.write("\\n")
'''


def _execution_dir(spec: SandboxSpec) -> tuple[Path, bool]:
    """A directory private to one execution. Returns (path, created_here)."""
    if spec.workdir is not None:
        base = Path(spec.workdir)
        base.mkdir(parents=True, exist_ok=True)
        return Path(tempfile.mkdtemp(prefix="exec-", dir=base)), True
    return Path(tempfile.mkdtemp(prefix="toolsmith-exec-")), True


def _schema_args(invocation_schema: Mapping[str, Any]) -> dict[str, ArgSpec]:
    specs: dict[str, ArgSpec] = {}
    for name, info in invocation_schema.get("args", {}).items():
        specs[name] = ArgSpec(
            type=str(info.get("type", "string")),
            required=bool(info.get("required", True)),
            description=str(info.get("description", "")),
        )
    return specs


def execute_tool(
    pkg: Any,
    args: Mapping[str, Any],
    spec: SandboxSpec,
    *,
    keep_workdir: bool = False,
) -> SandboxResult:
    """Run a registered tool package with the given arguments.

    Arguments are validated against the package's invocation schema before
    any process is spawned; SchemaViolation means nothing ran.
    """
    validate_args(_schema_args(pkg.invocation_schema), args)
    workdir, created = _execution_dir(spec)
    try:
        code_path = workdir / "tool.py"
        args_path = workdir / "args.json"
        driver_path = workdir / "_driver.py"
        code_path.write_text(pkg.code, encoding="utf-8")
        args_path.write_text(json.dumps(dict(args), ensure_ascii=False), encoding="utf-8")
        driver_path.write_text(DRIVER_SOURCE, encoding="utf-8")
        argv = list(spec.interpreter_command) + [
            str(driver_path),
            str(code_path),
            str(args_path),
            pkg.name,
        ]
        return _launch(argv, spec, workdir)
    finally:
        if created and not keep_workdir:
            shutil.rmtree(workdir, ignore_errors=True)


def run_tests(code: str, test_script: str, spec: SandboxSpec) -> TestReport:
    """Run a tool module's test script under the in-sandbox harness and parse
    the resulting report stream.

    An unparseable stream degrades to a report with a single synthetic error
    case; a wall-clock timeout yields a single timeout case.
    """
    if not spec.harness_command:
        raise SandboxUnavailable("no harness command configured for this sandbox")
    workdir, created = _execution_dir(spec)
    try:
        code_path = workdir / "tool.py"
        test_path = workdir / "test_tool.py"
        code_path.write_text(code, encoding="utf-8")
        test_path.write_text(test_script, encoding="utf-8")
        argv = list(spec.harness_command) + [str(code_path), str(test_path)]
        result = _launch(argv, spec, workdir)
    finally:
        if created:
            shutil.rmtree(workdir, ignore_errors=True)
    return parse_report_stream(result, timeout_ms=spec.timeout_ms)


def parse_report_stream(result: SandboxResult, timeout_ms: int = 0) -> TestReport:
    cases: list[TestCase] = []
    summary: Optional[dict[str, Any]] = None
    diagnostics: list[str] = []
    for line in result.stdout.splitlines():
        if not line.startswith(RECORD_PREFIX):
            diagnostics.append(line)
            continue
        try:
            record = json.loads(line[len(RECORD_PREFIX):])
        except json.JSONDecodeError:
            diagnostics.append(line)
            continue
        if not isinstance(record, dict):
            diagnostics.append(line)
        elif "test" in record:
            status = record.get("status", "error")
            cases.append(
                TestCase(
                    name=str(record["test"]),
                    status=status if status in STATUSES else "error",
                    message=str(record.get("message", "")),
                    duration_ms=int(record.get("duration_ms", 0)),
                )
            )
        elif "all_pass" in record:
            summary = record
        else:
            diagnostics.append(line)

    if result.timed_out:
        cases.append(
            TestCase(
                name="<script>",
                status="timeout",
                message=f"test script exceeded {timeout_ms}ms",
                duration_ms=result.duration_ms,
            )
        )
    elif summary is None or not cases:
        cases.append(
            TestCase(
                name="<harness>",
                status="error",
                message=str(
                    HarnessProtocolError(
                        "unparseable harness report stream"
                        if not cases
                        else "report stream is missing its summary record"
                    )
                ),
            )
        )
    elif (
        result.exit_code != 0
        and all(c.status == "pass" for c in cases)
        and summary.get("all_pass")
    ):
        cases.append(
            TestCase(
                name="<harness>",
                status="error",
                message=f"harness exited {result.exit_code} despite a passing report",
            )
        )

    if result.stderr.strip():
        diagnostics.append(result.stderr.strip())
    return TestReport.from_cases(cases, diagnostics="\n".join(d for d in diagnostics if d))


class SandboxExecutor:
    """Executes created tools through the sandbox; the production counterpart
    of the fake executors used in scripted tests."""

    def __init__(self, spec: SandboxSpec) -> None:
        self.spec = spec

    def execute(self, pkg: Any, args: Mapping[str, Any]) -> SandboxResult:
        return execute_tool(pkg, args, self.spec)


class SandboxTestRunner:
    def __init__(self, spec: SandboxSpec) -> None:
        self.spec = spec

    def run(self, code: str, test_script: str) -> TestReport:
        return run_tests(code, test_script, self.spec)


__all__ = [
    "RECORD_PREFIX",
    "SandboxSpec",
    "SandboxResult",
    "TestCase",
    "TestReport",
    "SchemaViolation",
    "SpawnFailure",
    "SandboxUnavailable",
    "HarnessProtocolError",
    "execute_tool",
    "run_tests",
    "parse_report_stream",
    "SandboxExecutor",
    "SandboxTestRunner",
]
