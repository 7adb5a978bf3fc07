"""Offline evolution of the tool memory.

Runs on an immutable snapshot plus the usage-event window and produces the
next generation in two phases:

1. Organize: tools are grouped when their description embeddings are at least
   ``dup_similarity_threshold`` similar or their comment/whitespace-stripped
   code hashes match. The most-used tool in a group survives, the rest become
   its aliases, and cumulative use counts are summed onto the survivor, so no
   usage mass is lost by merging.
2. Analyze & discard: survivors used fewer than ``min_uses_window`` times in
   the window are dropped as rarely used; survivors with a window failure
   rate above ``max_failure_rate`` (given at least ``min_uses_for_rate``
   window uses) are dropped as high failure. Remaining tools get a category
   label by nearest description embedding.

Committing the resulting memory is the registry's job and is the only
synchronization point with online readers.
"""

from __future__ import annotations

import copy
import hashlib
import io
import tokenize
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .embeddings import NgramHashEmbedder, cosine_or_zero
from .registry import ToolMemory, ToolRecord, UsageEvent

DEFAULT_CATEGORY_LABELS = (
    "algebraic calculation",
    "geometric operations",
    "statistical analysis",
    "number theory",
    "unit and format conversion",
    "data and text processing",
    "lookup and retrieval",
)


@dataclass
class ConsolidationPolicy:
    dup_similarity_threshold: float = 0.92
    min_uses_window: int = 1
    max_failure_rate: float = 0.5
    min_uses_for_rate: int = 5
    category_labels: tuple[str, ...] = DEFAULT_CATEGORY_LABELS

    def __post_init__(self) -> None:
        if not (0.0 < self.dup_similarity_threshold <= 1.0):
            raise ValueError("dup_similarity_threshold must be in (0, 1]")
        if not (0.0 <= self.max_failure_rate <= 1.0):
            raise ValueError("max_failure_rate must be in [0, 1]")
        if self.min_uses_window < 0 or self.min_uses_for_rate < 0:
            raise ValueError("use thresholds must be non-negative")


@dataclass
class ConsolidationReport:
    merged_groups: list[tuple[str, list[str]]] = field(default_factory=list)
    discarded: list[tuple[str, str]] = field(default_factory=list)
    categories_assigned: dict[str, str] = field(default_factory=dict)
    before_size: int = 0
    after_size: int = 0
    # survivor name -> summed cumulative uses right after the organize phase;
    # lets auditors check that merging conserved usage mass
    post_organize_uses: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "merged_groups": [
                {"survivor": s, "absorbed": a} for s, a in self.merged_groups
            ],
            "discarded": [{"name": n, "reason": r} for n, r in self.discarded],
            "categories_assigned": dict(self.categories_assigned),
            "before_size": self.before_size,
            "after_size": self.after_size,
            "post_organize_uses": dict(self.post_organize_uses),
        }


def normalize_code(code: str) -> str:
    """Strip comments and whitespace so trivially re-generated duplicates
    hash identically."""
    try:
        tokens = tokenize.generate_tokens(io.StringIO(code).readline)
        keep = [
            tok.string
            for tok in tokens
            if tok.type
            not in (
                tokenize.COMMENT,
                tokenize.NL,
                tokenize.NEWLINE,
                tokenize.INDENT,
                tokenize.DEDENT,
                tokenize.ENDMARKER,
            )
        ]
        return " ".join(keep)
    except (tokenize.TokenError, IndentationError, SyntaxError):
        lines = (line.split("#", 1)[0].strip() for line in code.splitlines())
        return " ".join(part for part in lines if part)


def code_fingerprint(code: str) -> str:
    return hashlib.sha256(normalize_code(code).encode("utf-8")).hexdigest()


class _UnionFind:
    def __init__(self, items: Iterable[str]) -> None:
        self.parent = {item: item for item in items}

    def find(self, item: str) -> str:
        while self.parent[item] != item:
            self.parent[item] = self.parent[self.parent[item]]
            item = self.parent[item]
        return item

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # deterministic: the lexicographically smaller root wins
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _window_counts(
    events: Iterable[UsageEvent], alias_of: dict[str, str]
) -> tuple[Counter, Counter]:
    uses: Counter = Counter()
    failures: Counter = Counter()
    for event in events:
        name = alias_of.get(event.tool, event.tool)
        uses[name] += 1
        if not event.ok:
            failures[name] += 1
    return uses, failures


def consolidate(
    snapshot: ToolMemory,
    events: Iterable[UsageEvent],
    policy: ConsolidationPolicy,
    *,
    embedder: Any = None,
) -> tuple[ToolMemory, ConsolidationReport]:
    """Pure function from (snapshot, event window, policy) to the next
    memory generation and its report; the snapshot is not mutated."""
    embedder = embedder if embedder is not None else NgramHashEmbedder()
    events = list(events)
    names = sorted(snapshot.created)
    records = {name: copy.deepcopy(snapshot.created[name]) for name in names}
    report = ConsolidationReport(before_size=len(names))

    # Phase 1: organize.
    vectors = {
        name: tuple(embedder.embed(records[name].package.description))
        for name in names
    }
    hashes = {name: code_fingerprint(records[name].package.code) for name in names}
    groups = _UnionFind(names)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            if hashes[a] == hashes[b]:
                groups.union(a, b)
            elif cosine_or_zero(vectors[a], vectors[b]) >= policy.dup_similarity_threshold:
                groups.union(a, b)

    members: dict[str, list[str]] = {}
    for name in names:
        members.setdefault(groups.find(name), []).append(name)

    survivors: dict[str, ToolRecord] = {}
    alias_of: dict[str, str] = {}
    for group in members.values():
        ranked = sorted(group, key=lambda n: (-records[n].uses, n))
        survivor_name = ranked[0]
        survivor = records[survivor_name]
        absorbed = ranked[1:]
        for name in absorbed:
            absorbed_record = records[name]
            survivor.uses += absorbed_record.uses
            survivor.failures += absorbed_record.failures
            survivor.aliases = sorted(
                set(survivor.aliases) | {name} | set(absorbed_record.aliases)
            )
            if absorbed_record.last_used_at is not None and (
                survivor.last_used_at is None
                or absorbed_record.last_used_at > survivor.last_used_at
            ):
                survivor.last_used_at = absorbed_record.last_used_at
            alias_of[name] = survivor_name
            for alias in absorbed_record.aliases:
                alias_of.setdefault(alias, survivor_name)
        survivors[survivor_name] = survivor
        if absorbed:
            report.merged_groups.append((survivor_name, absorbed))
        report.post_organize_uses[survivor_name] = survivor.uses

    # Phase 2: analyze and discard, on window statistics.
    window_uses, window_failures = _window_counts(events, alias_of)
    kept: dict[str, ToolRecord] = {}
    for name in sorted(survivors):
        uses = window_uses.get(name, 0)
        failures = window_failures.get(name, 0)
        if uses < policy.min_uses_window:
            report.discarded.append((name, "rarely_used"))
            continue
        if uses >= policy.min_uses_for_rate and failures / uses > policy.max_failure_rate:
            report.discarded.append((name, "high_failure"))
            continue
        kept[name] = survivors[name]

    # Category labels by nearest description embedding.
    label_vectors = [
        (label, tuple(embedder.embed(label))) for label in policy.category_labels
    ]
    for name in sorted(kept):
        record = kept[name]
        best_label, best_score = None, float("-inf")
        for label, label_vec in label_vectors:
            score = cosine_or_zero(vectors.get(name, ()), label_vec)
            if score > best_score:  # ties keep the earliest policy label
                best_label, best_score = label, score
        if best_label is not None:
            record.category = best_label
            report.categories_assigned[name] = best_label

    report.after_size = len(kept)
    new_memory = ToolMemory(
        core=dict(snapshot.core),
        created=kept,
        generation=snapshot.generation + 1,
    )
    return new_memory, report
