"""Benchmark curation: knowledge filtering, diversity sampling, judging.

The sampler implements iterative min-max selection: starting from a random
seed set, each step adds the pool candidate whose maximum cosine similarity
to the already-selected set is smallest, ties broken by lowest item id. All
similarity arithmetic is pure Python with left-to-right summation so results
are bit-for-bit reproducible against an independent oracle.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .embeddings import ZeroNorm
from .parsing import FinalAnswer, ParseError, parse_turn
from .policy import ChatMessage, EndpointUnavailable, ReplayMiss
from .prompts import ANSWER_JUDGE_PROMPT, KNOWLEDGE_FILTER_PROMPT

NUMERIC_TOLERANCE = 1e-6

# Selection steps per run when not overridden: quantitative reasoning pools
# use 5, visual question answering pools use 10.
DOMAIN_ITERATIONS = {"math": 5, "science": 5, "vqa": 10}
DEFAULT_ITERATIONS = 5


class PoolExhausted(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    components: tuple[float, ...]
    norm: float = field(init=False)

    def __post_init__(self) -> None:
        components = tuple(float(c) for c in self.components)
        if any(not math.isfinite(c) for c in components):
            raise ValueError("embedding components must be finite")
        object.__setattr__(self, "components", components)
        object.__setattr__(
            self, "norm", math.sqrt(sum(c * c for c in components))
        )


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.norm == 0.0 or b.norm == 0.0:
        raise ZeroNorm("cosine similarity requires nonzero vectors")
    dot = sum(x * y for x, y in zip(a.components, b.components))
    return dot / (a.norm * b.norm)


@dataclass(frozen=True)
class CandidateItem:
    id: str
    question: str
    source_benchmark: str = ""
    category: Optional[str] = None
    reference_answer: Optional[str] = None
    embedding: Optional[EmbeddingVector] = None


@dataclass
class SamplerState:
    selected: list[str]
    pool: set[str]
    iteration: int


def minmax_extend(
    selected: Sequence[CandidateItem],
    pool: Sequence[CandidateItem],
    iterations: int,
) -> tuple[list[str], list[str]]:
    """Run the iterative selection from an explicit starting set. Returns the
    ids added (in order) and the ids left in the pool."""
    for item in list(selected) + list(pool):
        if item.embedding is None or item.embedding.norm == 0.0:
            raise ValueError(f"item {item.id!r} lacks a usable embedding")
    if iterations > len(pool):
        raise PoolExhausted(
            f"{iterations} iterations requested with only {len(pool)} candidates"
        )
    chosen = list(selected)
    remaining = sorted(pool, key=lambda item: item.id)
    added: list[str] = []
    for _ in range(iterations):
        best_item = None
        best_score = math.inf
        for item in remaining:  # ascending id order: ties keep the lowest id
            worst = max(
                cosine_similarity(item.embedding, q.embedding) for q in chosen
            )
            if worst < best_score:
                best_item, best_score = item, worst
        added.append(best_item.id)
        chosen.append(best_item)
        remaining = [item for item in remaining if item.id != best_item.id]
    return added, [item.id for item in remaining]


def minmax_sample(
    pool: Sequence[CandidateItem],
    seed_count: int,
    iterations: int,
    rng_seed: int,
) -> SamplerState:
    """Seed with ``seed_count`` uniform-random items under ``rng_seed``, then
    run ``iterations`` min-max selection steps."""
    if seed_count < 1:
        raise ValueError("seed_count must be >= 1")
    if len(pool) < seed_count + iterations:
        raise PoolExhausted(
            f"pool of {len(pool)} cannot seed {seed_count} and select {iterations}"
        )
    by_id = {item.id: item for item in pool}
    if len(by_id) != len(pool):
        raise ValueError("candidate ids must be unique within a pool")
    ordered_ids = sorted(by_id)
    rng = random.Random(rng_seed)
    seed_ids = rng.sample(ordered_ids, seed_count)
    candidates = [by_id[i] for i in ordered_ids if i not in set(seed_ids)]
    added, remaining = minmax_extend(
        [by_id[i] for i in seed_ids], candidates, iterations
    )
    return SamplerState(
        selected=seed_ids + added, pool=set(remaining), iteration=iterations
    )


def iterations_for_category(category: Optional[str]) -> int:
    if not category:
        return DEFAULT_ITERATIONS
    key = category.strip().lower()
    for prefix, count in DOMAIN_ITERATIONS.items():
        if key.startswith(prefix):
            return count
    return DEFAULT_ITERATIONS


# -- answer judging ------------------------------------------------------------


def _parse_numbers(text: str) -> Optional[list[float]]:
    s = text.strip()
    if not s:
        return None
    try:
        decoded = json.loads(s)
    except json.JSONDecodeError:
        decoded = None
    if isinstance(decoded, bool):
        return None
    if isinstance(decoded, (int, float)):
        return [float(decoded)]
    if isinstance(decoded, list):
        try:
            return [float(v) for v in decoded]
        except (TypeError, ValueError):
            return None
    if "," in s:
        parts = [p.strip() for p in s.strip("[]() ").split(",") if p.strip()]
        try:
            values = [float(p) for p in parts]
        except ValueError:
            return None
        return values if values else None
    try:
        return [float(s)]
    except ValueError:
        return None


def judge_answer(
    predicted: str,
    reference: str,
    *,
    judge: Optional[Callable[[str, str], str]] = None,
    tolerance: float = NUMERIC_TOLERANCE,
) -> bool:
    """Numeric answers compare within an absolute tolerance; multi-value
    answers must match on every value. Non-numeric answers defer to the
    optional judge callable (expected to reply yes/no), else to normalized
    string equality. Anything undetermined is wrong."""
    predicted_values = _parse_numbers(predicted)
    reference_values = _parse_numbers(reference)
    if predicted_values is not None and reference_values is not None:
        if len(predicted_values) != len(reference_values):
            return False
        return all(
            abs(p - r) <= tolerance
            for p, r in zip(predicted_values, reference_values)
        )
    if judge is not None:
        try:
            verdict = judge(predicted, reference).strip().lower()
        except Exception:
            return False
        return verdict.startswith("yes")
    return " ".join(predicted.lower().split()) == " ".join(reference.lower().split())


def policy_judge(adapter: Any) -> Callable[[str, str], str]:
    """Judge callable backed by the chat adapter (replayable like any other
    persona)."""

    def ask(predicted: str, reference: str) -> str:
        messages = [
            ChatMessage("system", ANSWER_JUDGE_PROMPT),
            ChatMessage(
                "user", f"Predicted answer: {predicted}\nReference answer: {reference}"
            ),
        ]
        return adapter.complete(messages)

    return ask


# -- knowledge filtering ------------------------------------------------------


@dataclass
class FilterResult:
    retained: list[CandidateItem]
    dropped: list[CandidateItem]
    undetermined: set[str]


def knowledge_filter(
    items: Sequence[CandidateItem],
    adapter: Any,
    *,
    judge: Optional[Callable[[str, str], str]] = None,
) -> FilterResult:
    """Drop items the policy answers correctly without tools; keep the rest.
    Adapter failures leave the item retained but flagged undetermined."""
    result = FilterResult(retained=[], dropped=[], undetermined=set())
    for item in items:
        if item.reference_answer is None:
            result.retained.append(item)
            result.undetermined.add(item.id)
            continue
        messages = [
            ChatMessage("system", KNOWLEDGE_FILTER_PROMPT),
            ChatMessage("user", item.question),
        ]
        try:
            text = adapter.complete(messages)
        except (EndpointUnavailable, ReplayMiss):
            result.retained.append(item)
            result.undetermined.add(item.id)
            continue
        predicted = _extract_answer(text)
        if judge_answer(predicted, item.reference_answer, judge=judge):
            result.dropped.append(item)
        else:
            result.retained.append(item)
    return result


def _extract_answer(text: str) -> str:
    try:
        turn = parse_turn(text)
    except ParseError:
        return text.strip()
    if isinstance(turn.payload, FinalAnswer):
        return turn.payload.text
    return text.strip()


# -- dataset ingestion -----------------------------------------------------------

_FIELDS = ("id", "question", "answer", "source", "category")


def load_items(path: Path | str, embedder: Any = None) -> list[CandidateItem]:
    """Read candidate items from a .jsonl or .csv record file with fields
    id, question, answer, source, category; optionally embed questions."""
    path = Path(path)
    rows: list[dict[str, Any]]
    if path.suffix == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    else:
        rows = [
            json.loads(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    items = []
    for row in rows:
        embedding = None
        if "embedding" in row and row["embedding"]:
            raw = row["embedding"]
            components = json.loads(raw) if isinstance(raw, str) else raw
            embedding = EmbeddingVector(tuple(float(c) for c in components))
        elif embedder is not None:
            embedding = EmbeddingVector(tuple(embedder.embed(str(row["question"]))))
        items.append(
            CandidateItem(
                id=str(row["id"]),
                question=str(row["question"]),
                source_benchmark=str(row.get("source", "")),
                category=row.get("category") or None,
                reference_answer=(
                    str(row["answer"]) if row.get("answer") not in (None, "") else None
                ),
                embedding=embedding,
            )
        )
    dims = {item.embedding.components and len(item.embedding.components)
            for item in items if item.embedding is not None}
    if len(dims) > 1:
        raise ValueError(f"inconsistent embedding dimensions in pool: {sorted(dims)}")
    return items


def save_items(
    path: Path | str,
    items: Iterable[CandidateItem],
    extra: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> None:
    """Write items back as JSON lines, carrying optional per-id selection
    metadata."""
    lines = []
    for item in items:
        row: dict[str, Any] = {
            "id": item.id,
            "question": item.question,
            "answer": item.reference_answer,
            "source": item.source_benchmark,
            "category": item.category,
        }
        if extra and item.id in extra:
            row.update(extra[item.id])
        lines.append(json.dumps(row, ensure_ascii=False, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
