"""Structured code review gating tool acceptance.

The reviewer persona runs on the shared chat adapter and must answer with a
fenced JSON verdict. Parsing is total: any reviewer output maps to some
CritiqueResult, and anything unparseable (after one retry) collapses to a
rejection, never to an approval.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Optional

from .policy import ChatMessage, PolicyAdapter
from .prompts import CRITIC_RETRY_PROMPT, CRITIC_REVIEW_TEMPLATE, CRITIC_SYSTEM_PROMPT
from .sandbox import TestReport

APPROVAL_THRESHOLD = 8

_FENCE_RE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


@dataclass(frozen=True)
class CritiqueResult:
    score: int
    approved: bool
    suggestions: tuple[str, ...]
    blocking_issues: tuple[str, ...]


def render_report(report: TestReport) -> str:
    lines = []
    for case in report.cases:
        line = f"{case.name}: {case.status}"
        if case.message:
            line += f" ({case.message})"
        lines.append(line)
    lines.append("all tests passed" if report.all_pass else "tests FAILED")
    if report.diagnostics:
        lines.append("diagnostics:\n" + report.diagnostics)
    return "\n".join(lines)


def _extract_verdict(text: str) -> Optional[dict[str, Any]]:
    candidates = [m.group(1) for m in _FENCE_RE.finditer(text)]
    decoder = json.JSONDecoder()
    if not candidates:
        for index, char in enumerate(text):
            if char != "{":
                continue
            try:
                obj, _ = decoder.raw_decode(text[index:])
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict) and ("score" in obj or "approved" in obj):
                return obj
        return None
    for candidate in candidates:
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _finalize(raw: dict[str, Any], threshold: int) -> CritiqueResult:
    try:
        score = int(raw.get("score", 0))
    except (TypeError, ValueError):
        score = 0
    score = max(0, min(10, score))
    suggestions = tuple(str(s) for s in raw.get("suggestions", []) if str(s).strip())
    blocking = tuple(str(b) for b in raw.get("blocking_issues", []) if str(b).strip())
    approved = bool(raw.get("approved", False)) and score >= threshold and not blocking
    if not approved and not suggestions:
        suggestions = blocking or ("address the reported problems and resubmit",)
    return CritiqueResult(
        score=score, approved=approved, suggestions=suggestions, blocking_issues=blocking
    )


UNPARSEABLE = CritiqueResult(
    score=0,
    approved=False,
    suggestions=("resubmit with a machine-readable verdict",),
    blocking_issues=("unparseable review",),
)


class Critic:
    """Stateless reviewer; safe for concurrent use."""

    def __init__(self, adapter: PolicyAdapter, threshold: int = APPROVAL_THRESHOLD) -> None:
        self.adapter = adapter
        self.threshold = threshold

    def review(self, code: str, report: TestReport, ticket: Any) -> CritiqueResult:
        messages = [
            ChatMessage("system", CRITIC_SYSTEM_PROMPT),
            ChatMessage(
                "user",
                CRITIC_REVIEW_TEMPLATE.format(
                    requirement=getattr(ticket, "requirement", str(ticket)),
                    code=code,
                    report=render_report(report),
                ),
            ),
        ]
        for _ in range(2):
            text = self.adapter.complete(messages)
            raw = _extract_verdict(text)
            if raw is not None:
                return _finalize(raw, self.threshold)
            messages = messages + [
                ChatMessage("assistant", text),
                ChatMessage("user", CRITIC_RETRY_PROMPT),
            ]
        return UNPARSEABLE
