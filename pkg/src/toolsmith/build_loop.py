"""On-demand tool construction: from a build ticket to a registered package.

The build conversation is fully isolated from the originating task; only the
final observation crosses back. Each iteration generates tool code plus its
test script in a single model pass, runs the tests, and gates registration on
two independent signals: an all-pass test report and an approving review.
Failed iterations feed a composite observation back to the builder, sandbox
output first, then the reviewer's critique.
"""

from __future__ import annotations

import ast
import itertools
import re
import sys
import time
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Callable, Mapping, Optional, Union

from .critic import Critic, CritiqueResult, render_report
from .parsing import CreateRequest, ToolInvocation, normalize_tool_name
from .policy import ChatMessage, PolicyAdapter
from .prompts import (
    BUILD_TICKET_TEMPLATE,
    BUILDER_SYSTEM_PROMPT,
    MISSING_ARTIFACTS_FEEDBACK,
    REFINE_FEEDBACK_HEADER,
)
from .sandbox import TestCase, TestReport

if TYPE_CHECKING:  # pragma: no cover
    from .registry import ToolRegistry


class BuildError(RuntimeError):
    pass


class BuildExhausted(BuildError):
    """The iteration cap was reached without an accepted tool."""


@dataclass(frozen=True)
class BuildTicket:
    id: str
    context_summary: str
    requirement: str
    proposed_name: str
    io_schema_hint: Optional[str] = None
    origin_task: str = ""

    def __post_init__(self) -> None:
        if not self.requirement.strip():
            raise ValueError("ticket requirement must not be empty")
        if not re.fullmatch(r"[a-z0-9_]+", self.proposed_name):
            raise ValueError(f"invalid proposed_name {self.proposed_name!r}")


@dataclass
class ToolCandidate:
    iteration: int
    code: str
    test_script: str
    last_sandbox: Optional[TestReport] = None
    last_critique: Optional[CritiqueResult] = None


@dataclass(frozen=True)
class ToolPackage:
    name: str
    version: int
    code: str
    invocation_schema: Mapping[str, Any]
    dependencies: tuple[str, ...]
    test_results: TestReport
    created_from: str
    created_at: float
    test_script: str = ""

    @property
    def description(self) -> str:
        return str(self.invocation_schema.get("description", ""))


@dataclass
class BuildConfig:
    max_iterations: int = 5
    # Refinement prompts present the raw sandbox output before the critique.
    sandbox_feedback_first: bool = True


CONTEXT_SUMMARY_LIMIT = 1024

_STOPWORDS = frozenset(
    "a an the i we you please want need needs to make create build write "
    "implement tool that which for me us my our of with some new".split()
)


def derive_tool_name(text: str) -> str:
    """Slug a free-text creation request into an identifier, dropping filler
    words ('need a unit converter' becomes 'unit_converter')."""
    words = [w for w in re.findall(r"[a-z0-9]+", text.lower()) if w not in _STOPWORDS]
    slug = "_".join(words[:5]) if words else ""
    return slug or "created_tool"


def _json_type(value: Any) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, (list, tuple)):
        return "array"
    if isinstance(value, dict):
        return "object"
    return "string"


def summarize_context(task_context: str, limit: int = CONTEXT_SUMMARY_LIMIT) -> str:
    """Bounded digest of the task so far; keeps the most recent tail."""
    text = " ".join(task_context.split())
    if len(text) <= limit:
        return text
    return "..." + text[-(limit - 3):]


_ticket_counter = itertools.count(1)


def make_ticket(
    task_context: str,
    missing: Union[ToolInvocation, CreateRequest],
    *,
    origin_task: str = "adhoc",
    seq: Optional[int] = None,
) -> BuildTicket:
    """Compose a build ticket from either a call to a nonexistent tool or an
    explicit creation request."""
    if seq is None:
        seq = next(_ticket_counter)
    if isinstance(missing, ToolInvocation):
        proposed = normalize_tool_name(missing.name) or "created_tool"
        arg_bits = [f"{k} ({_json_type(v)})" for k, v in missing.arguments.items()]
        io_hint = "arguments: " + (", ".join(arg_bits) if arg_bits else "none")
        requirement = (
            f"Implement a tool named '{proposed}' able to handle calls such as "
            f"{proposed}({', '.join(f'{k}={v!r}' for k, v in missing.arguments.items())})."
        )
    else:
        proposed = derive_tool_name(missing.ticket_draft)
        requirement = missing.ticket_draft.strip()
        io_hint = None
    return BuildTicket(
        id=f"{origin_task}:t{seq}",
        context_summary=summarize_context(task_context),
        requirement=requirement,
        proposed_name=proposed,
        io_schema_hint=io_hint,
        origin_task=origin_task,
    )


_ARTIFACT_RE = re.compile(
    r"<artifact\b[^>]*?path=\"([^\"]+)\"[^>]*>\n?(.*?)</artifact>", re.DOTALL
)
_FENCE_RE = re.compile(r"```(?:python)?\n(.*?)```", re.DOTALL)


def extract_artifacts(text: str) -> Optional[tuple[str, str]]:
    """Pull (tool code, test script) out of a builder response; None when the
    expected pair is missing."""
    code = test_script = None
    for path, body in _ARTIFACT_RE.findall(text):
        basename = path.rsplit("/", 1)[-1]
        if basename.startswith("test"):
            test_script = body.strip() + "\n"
        elif basename.endswith(".py"):
            code = body.strip() + "\n"
    if code is None or test_script is None:
        fenced = _FENCE_RE.findall(text)
        if len(fenced) >= 2:
            code = code or fenced[0].strip() + "\n"
            test_script = test_script or fenced[1].strip() + "\n"
    if code and test_script:
        return code, test_script
    return None


_MANIFEST_RE = re.compile(r"^#\s*tool-(description|arg|dep):\s*(.+)$")

_ARG_TYPES = ("string", "integer", "number", "boolean", "array", "object")


def parse_manifest(code: str) -> tuple[str, dict[str, dict[str, Any]], tuple[str, ...]]:
    """Read the declared description, argument schema and dependencies from a
    tool module's manifest header comments."""
    description = ""
    args: dict[str, dict[str, Any]] = {}
    deps: list[str] = []
    for line in code.splitlines():
        match = _MANIFEST_RE.match(line.strip())
        if not match:
            continue
        kind, body = match.group(1), match.group(2).strip()
        if kind == "description":
            description = body
        elif kind == "dep":
            deps.append(body.split()[0])
        else:
            parts = body.split(None, 3)
            if len(parts) < 2:
                continue
            name = normalize_tool_name(parts[0])
            arg_type = parts[1].lower()
            required = True
            note = ""
            if len(parts) >= 3:
                required = parts[2].lower() != "optional"
                note = parts[3] if len(parts) == 4 else ""
            if name and arg_type in _ARG_TYPES:
                args[name] = {
                    "type": arg_type,
                    "required": required,
                    "description": note,
                }
    return description, args, tuple(deps)


def _normalize_dist(name: str) -> str:
    return name.lower().replace("-", "_")


def undeclared_imports(code: str, declared: tuple[str, ...]) -> list[str]:
    """Top-level imports that are neither stdlib nor declared dependencies.
    Unparseable code reports nothing; the tests will catch it."""
    try:
        tree = ast.parse(code)
    except SyntaxError:
        return []
    allowed = set(sys.stdlib_module_names) | {_normalize_dist(d) for d in declared}
    offending = []
    for node in ast.walk(tree):
        names: list[str] = []
        if isinstance(node, ast.Import):
            names = [alias.name.split(".")[0] for alias in node.names]
        elif isinstance(node, ast.ImportFrom) and node.level == 0 and node.module:
            names = [node.module.split(".")[0]]
        for name in names:
            if _normalize_dist(name) not in allowed and name not in offending:
                offending.append(name)
    return offending


def _policy_failure_report(case_name: str, message: str) -> TestReport:
    return TestReport.from_cases([TestCase(case_name, "fail", message)])


class BuildLoop:
    """Drives ticket-to-package construction against an adapter, a critic, a
    test runner and the registry."""

    def __init__(
        self,
        adapter: PolicyAdapter,
        critic: Critic,
        test_runner: Any,
        registry: "ToolRegistry",
        cfg: BuildConfig | None = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.adapter = adapter
        self.critic = critic
        self.test_runner = test_runner
        self.registry = registry
        self.cfg = cfg or BuildConfig()
        self.clock = clock
        self.last_candidate: Optional[ToolCandidate] = None

    def run_build(self, ticket: BuildTicket) -> ToolPackage:
        """Iterate generate/test/review until an accepted package is
        registered, or raise BuildExhausted at the iteration cap. A failed
        build leaves the registry untouched."""
        messages = [
            ChatMessage("system", BUILDER_SYSTEM_PROMPT),
            ChatMessage(
                "user",
                BUILD_TICKET_TEMPLATE.format(
                    ticket_id=ticket.id,
                    requirement=ticket.requirement,
                    proposed_name=ticket.proposed_name,
                    io_schema_hint=ticket.io_schema_hint or "design a sensible one",
                    context_summary=ticket.context_summary or "(none)",
                ),
            ),
        ]
        candidate: Optional[ToolCandidate] = None
        for iteration in range(self.cfg.max_iterations):
            text = self.adapter.complete(messages)
            messages.append(ChatMessage("assistant", text))
            extracted = extract_artifacts(text)
            if extracted is None:
                messages.append(ChatMessage("user", MISSING_ARTIFACTS_FEEDBACK))
                continue
            code, test_script = extracted
            candidate = ToolCandidate(iteration=iteration, code=code, test_script=test_script)
            self.last_candidate = candidate

            description, arg_schema, deps = parse_manifest(code)
            offending = undeclared_imports(code, deps)
            if not description:
                report = _policy_failure_report(
                    "manifest_policy",
                    "missing manifest header (# tool-description, # tool-arg lines)",
                )
            elif offending:
                report = _policy_failure_report(
                    "dependency_policy",
                    f"undeclared imports: {', '.join(offending)}; declare them with "
                    "# tool-dep lines",
                )
            else:
                report = self.test_runner.run(code, test_script)
            candidate.last_sandbox = report

            critique = self.critic.review(code, report, ticket)
            candidate.last_critique = critique

            if report.all_pass and critique.approved:
                package = ToolPackage(
                    name=ticket.proposed_name,
                    version=1,
                    code=code,
                    invocation_schema={"description": description, "args": arg_schema},
                    dependencies=deps,
                    test_results=report,
                    created_from=ticket.id,
                    created_at=self.clock(),
                    test_script=test_script,
                )
                final_name = self.registry.register(package)
                return replace(package, name=final_name)

            messages.append(ChatMessage("user", compose_feedback(report, critique, self.cfg)))
        raise BuildExhausted(
            f"ticket {ticket.id}: no accepted tool within "
            f"{self.cfg.max_iterations} iterations"
        )


def compose_feedback(
    report: TestReport, critique: CritiqueResult, cfg: BuildConfig | None = None
) -> str:
    """Composite observation for the next refinement: execution feedback and
    review suggestions in the configured order."""
    cfg = cfg or BuildConfig()
    sandbox_part = "Test results:\n" + render_report(report)
    review_lines = [f"Reviewer verdict: score {critique.score}/10, " +
                    ("approved" if critique.approved else "not approved")]
    for issue in critique.blocking_issues:
        review_lines.append(f"blocking: {issue}")
    for suggestion in critique.suggestions:
        review_lines.append(f"suggestion: {suggestion}")
    review_part = "\n".join(review_lines)
    ordered = (
        [sandbox_part, review_part]
        if cfg.sandbox_feedback_first
        else [review_part, sandbox_part]
    )
    return REFINE_FEEDBACK_HEADER + "\n\n" + "\n\n".join(ordered)
