"""Persistent tool memory: the fixed core set plus created tools, with an
append-only usage log.

Disk layout under the registry root (human-inspectable, atomic via
write-temp-then-rename):

    CURRENT                 current generation number
    gen-000001/
        tools/<name>/v<k>/  manifest.json, tool.py, test_tool.py, report.json
        events.jsonl        one usage event per line

Each consolidation commit writes a complete new generation directory and
swaps CURRENT; readers holding an old snapshot are never blocked for longer
than that pointer swap. Usage counters in memory always equal the carried
counts from the manifest plus the aggregation of the current generation's
event log.
"""

from __future__ import annotations

import copy
import json
import os
import shutil
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Collection, Iterable, Mapping, Optional

from .build_loop import ToolPackage
from .core_tools import ToolDescriptor, core_descriptor_map
from .embeddings import EmbedderUnavailable, NgramHashEmbedder, cosine_or_zero
from .sandbox import TestReport


class StorageFailure(RuntimeError):
    pass


class EmptyLibrary(ValueError):
    """reuse@k is undefined over an empty created-tool set."""


@dataclass(frozen=True)
class UsageEvent:
    tool: str
    task_id: str
    ok: bool
    duration_ms: int
    at: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool": self.tool,
            "task_id": self.task_id,
            "ok": self.ok,
            "duration_ms": self.duration_ms,
            "at": self.at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UsageEvent":
        return cls(
            tool=data["tool"],
            task_id=data.get("task_id", ""),
            ok=bool(data["ok"]),
            duration_ms=int(data.get("duration_ms", 0)),
            at=float(data.get("at", 0.0)),
        )


@dataclass
class ToolRecord:
    package: ToolPackage
    uses: int = 0
    failures: int = 0
    last_used_at: Optional[float] = None
    aliases: list[str] = field(default_factory=list)
    category: Optional[str] = None


@dataclass
class ToolMemory:
    core: dict[str, ToolDescriptor]
    created: dict[str, ToolRecord]
    generation: int


def reuse_at_k(
    events: Iterable[UsageEvent], k: int, library: Collection[str]
) -> Fraction:
    """Fraction of the created-tool library invoked at least k times in the
    given event window. Exact rational, no rounding."""
    if k < 1:
        raise ValueError("k must be >= 1")
    names = set(library)
    if not names:
        raise EmptyLibrary("no created tools to measure")
    counts = Counter(e.tool for e in events if e.tool in names)
    reused = sum(1 for name in names if counts[name] >= k)
    return Fraction(reused, len(names))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class ToolRegistry:
    """Single-writer registry with many concurrent readers.

    ``register`` and ``record_usage`` are serialized internally; ``snapshot``
    hands out an independent copy safe to consolidate offline.
    """

    def __init__(
        self,
        root: Path | str,
        *,
        core: Optional[Mapping[str, ToolDescriptor]] = None,
        embedder: Any = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.root = Path(root)
        self.core: dict[str, ToolDescriptor] = (
            dict(core) if core is not None else core_descriptor_map()
        )
        self.embedder = embedder if embedder is not None else NgramHashEmbedder()
        self.clock = clock
        self._lock = threading.Lock()
        self._created: dict[str, ToolRecord] = {}
        self._events: list[UsageEvent] = []
        self._embeddings: dict[str, tuple[float, ...]] = {}
        self.root.mkdir(parents=True, exist_ok=True)
        current = self.root / "CURRENT"
        if current.exists():
            self._generation = int(current.read_text(encoding="utf-8").strip())
            self._load_generation()
        else:
            self._generation = 1
            (self._gen_dir() / "tools").mkdir(parents=True, exist_ok=True)
            (self._gen_dir() / "events.jsonl").touch()
            _atomic_write_text(current, f"{self._generation}\n")

    # -- paths ------------------------------------------------------------

    def _gen_dir(self, generation: Optional[int] = None) -> Path:
        generation = self._generation if generation is None else generation
        return self.root / f"gen-{generation:06d}"

    def _events_path(self) -> Path:
        return self._gen_dir() / "events.jsonl"

    # -- loading ----------------------------------------------------------

    def _load_generation(self) -> None:
        tools_dir = self._gen_dir() / "tools"
        self._created = {}
        self._embeddings = {}
        if tools_dir.exists():
            for tool_dir in sorted(tools_dir.iterdir()):
                versions = sorted(
                    (d for d in tool_dir.iterdir() if d.name.startswith("v")),
                    key=lambda d: int(d.name[1:]),
                )
                if not versions:
                    continue
                record = self._load_record(versions[-1])
                self._created[record.package.name] = record
        self._events = []
        events_path = self._events_path()
        if events_path.exists():
            for line in events_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._events.append(UsageEvent.from_dict(json.loads(line)))
        for event in self._events:
            record = self._created.get(self._resolve(event.tool))
            if record is not None:
                record.uses += 1
                if not event.ok:
                    record.failures += 1
                if record.last_used_at is None or event.at > record.last_used_at:
                    record.last_used_at = event.at
        for name, record in self._created.items():
            self._embeddings[name] = self._embed_safe(record.package.description)

    def _load_record(self, version_dir: Path) -> ToolRecord:
        manifest = json.loads((version_dir / "manifest.json").read_text(encoding="utf-8"))
        package = ToolPackage(
            name=manifest["name"],
            version=int(manifest["version"]),
            code=(version_dir / "tool.py").read_text(encoding="utf-8"),
            invocation_schema=manifest["invocation_schema"],
            dependencies=tuple(manifest.get("dependencies", [])),
            test_results=TestReport.from_dict(
                json.loads((version_dir / "report.json").read_text(encoding="utf-8"))
            ),
            created_from=manifest.get("created_from", ""),
            created_at=float(manifest.get("created_at", 0.0)),
            test_script=(version_dir / "test_tool.py").read_text(encoding="utf-8"),
        )
        return ToolRecord(
            package=package,
            uses=int(manifest.get("carried_uses", 0)),
            failures=int(manifest.get("carried_failures", 0)),
            last_used_at=manifest.get("last_used_at"),
            aliases=list(manifest.get("aliases", [])),
            category=manifest.get("category"),
        )

    # -- registration -----------------------------------------------------

    def register(self, pkg: ToolPackage) -> str:
        """Durably store a package, then expose it; returns the final name
        (suffixed on collision). Storage failures leave no partial state."""
        if not pkg.test_results.all_pass:
            raise ValueError("refusing to register a package without all-pass tests")
        if not pkg.invocation_schema.get("description"):
            raise ValueError("refusing to register a package without a description")
        with self._lock:
            final_name = self._unused_name(pkg.name)
            aliases = [pkg.name] if final_name != pkg.name else []
            stored = replace(pkg, name=final_name)
            self._write_tool_dir(stored, aliases=aliases, category=None, carried=(0, 0))
            record = ToolRecord(package=stored, aliases=aliases)
            self._created[final_name] = record
            self._embeddings[final_name] = self._embed_safe(stored.description)
            return final_name

    def _unused_name(self, name: str) -> str:
        taken = set(self._created) | set(self.core)
        if name not in taken:
            return name
        suffix = 2
        while f"{name}_{suffix}" in taken:
            suffix += 1
        return f"{name}_{suffix}"

    def _write_tool_dir(
        self,
        pkg: ToolPackage,
        *,
        aliases: list[str],
        category: Optional[str],
        carried: tuple[int, int],
        last_used_at: Optional[float] = None,
        generation: Optional[int] = None,
    ) -> None:
        final_dir = self._gen_dir(generation) / "tools" / pkg.name / f"v{pkg.version}"
        staging = final_dir.parent / f".tmp-v{pkg.version}"
        try:
            staging.mkdir(parents=True, exist_ok=False)
            manifest = {
                "name": pkg.name,
                "version": pkg.version,
                "invocation_schema": dict(pkg.invocation_schema),
                "dependencies": list(pkg.dependencies),
                "created_from": pkg.created_from,
                "created_at": pkg.created_at if pkg.created_at else self.clock(),
                "aliases": aliases,
                "category": category,
                "carried_uses": carried[0],
                "carried_failures": carried[1],
                "last_used_at": last_used_at,
            }
            (staging / "manifest.json").write_text(
                json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=1) + "\n",
                encoding="utf-8",
            )
            (staging / "tool.py").write_text(pkg.code, encoding="utf-8")
            (staging / "test_tool.py").write_text(pkg.test_script, encoding="utf-8")
            (staging / "report.json").write_text(
                json.dumps(pkg.test_results.to_dict(), sort_keys=True, ensure_ascii=False)
                + "\n",
                encoding="utf-8",
            )
            os.rename(staging, final_dir)
        except OSError as exc:
            shutil.rmtree(staging, ignore_errors=True)
            raise StorageFailure(f"could not store tool '{pkg.name}': {exc}") from exc

    # -- usage log ----------------------------------------------------------

    def record_usage(
        self, tool: str, task_id: str, ok: bool, duration_ms: int
    ) -> UsageEvent:
        with self._lock:
            name = self._resolve(tool)
            record = self._created.get(name)
            if record is None:
                raise KeyError(f"'{tool}' is not a created tool")
            event = UsageEvent(
                tool=name, task_id=task_id, ok=ok, duration_ms=duration_ms, at=self.clock()
            )
            with open(self._events_path(), "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
            self._events.append(event)
            record.uses += 1
            if not ok:
                record.failures += 1
            record.last_used_at = event.at
            return event

    def events(self) -> tuple[UsageEvent, ...]:
        return tuple(self._events)

    def _resolve(self, name: str) -> str:
        if name in self._created:
            return name
        for canonical, record in self._created.items():
            if name in record.aliases:
                return canonical
        return name

    # -- lookups and search -------------------------------------------------

    @property
    def generation(self) -> int:
        return self._generation

    @property
    def created(self) -> dict[str, ToolRecord]:
        return dict(self._created)

    def lookup_created(self, name: str) -> Optional[ToolRecord]:
        return self._created.get(self._resolve(name))

    def snapshot(self) -> ToolMemory:
        with self._lock:
            return ToolMemory(
                core=dict(self.core),
                created={name: copy.deepcopy(rec) for name, rec in self._created.items()},
                generation=self._generation,
            )

    def _embed_safe(self, text: str) -> tuple[float, ...]:
        try:
            return tuple(self.embedder.embed(text))
        except EmbedderUnavailable:
            return ()

    def search(self, query: str, k: int) -> list[str]:
        """Rank tools against a query: an exact name match dominates, then
        description-embedding similarity; on embedder failure, degrades to
        exact/substring name matching."""
        if k < 1:
            raise ValueError("k must be >= 1")
        from .parsing import normalize_tool_name

        normalized = normalize_tool_name(query)
        query_vec = self._embed_safe(query)
        scored: list[tuple[int, float, str]] = []
        candidates: list[tuple[str, str]] = [
            (name, descriptor.description) for name, descriptor in self.core.items()
        ] + [(name, record.package.description) for name, record in self._created.items()]
        for name, description in candidates:
            exact = 0 if name == normalized else 1
            if query_vec:
                doc_vec = self._embeddings.get(name) or self._embed_safe(description)
                score = cosine_or_zero(query_vec, doc_vec)
            else:
                score = 1.0 if normalized and normalized in name else 0.0
            scored.append((exact, -score, name))
        scored.sort()
        return [name for exact, neg, name in scored[:k] if exact == 0 or -neg > 0.0]

    def reuse_at_k(
        self, k: int, events: Optional[Iterable[UsageEvent]] = None
    ) -> Fraction:
        return reuse_at_k(
            self._events if events is None else events, k, list(self._created)
        )

    # -- consolidation commit -------------------------------------------------

    def commit(self, new_memory: ToolMemory) -> int:
        """Write the next generation durably, then swap the pointer. In-flight
        snapshots keep serving the previous generation; a same-or-older
        generation commit is a no-op."""
        with self._lock:
            if new_memory.generation <= self._generation:
                return self._generation
            generation = new_memory.generation
            gen_dir = self._gen_dir(generation)
            try:
                if gen_dir.exists():
                    shutil.rmtree(gen_dir)
                (gen_dir / "tools").mkdir(parents=True)
                for name, record in sorted(new_memory.created.items()):
                    self._write_tool_dir(
                        record.package,
                        aliases=list(record.aliases),
                        category=record.category,
                        carried=(record.uses, record.failures),
                        last_used_at=record.last_used_at,
                        generation=generation,
                    )
                (gen_dir / "events.jsonl").touch()
                _atomic_write_text(self.root / "CURRENT", f"{generation}\n")
            except (OSError, StorageFailure) as exc:
                shutil.rmtree(gen_dir, ignore_errors=True)
                if isinstance(exc, StorageFailure):
                    raise
                raise StorageFailure(f"commit of generation {generation} failed: {exc}") from exc
            self._generation = generation
            self._created = {
                name: copy.deepcopy(record) for name, record in new_memory.created.items()
            }
            self._events = []
            self._embeddings = {
                name: self._embed_safe(record.package.description)
                for name, record in self._created.items()
            }
            return self._generation
