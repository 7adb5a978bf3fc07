"""Operator command line.

Subcommands: run, build, consolidate, curate (filter|sample|judge), stats,
replay. Configuration precedence is flags over TOOLSMITH_* environment
variables over an optional JSON config file. Failures print one
machine-readable JSON error record to stderr; usage errors exit 64, runtime
failures exit 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Sequence

from .build_loop import BuildConfig, BuildError, BuildLoop, BuildTicket
from .consolidation import ConsolidationPolicy, consolidate
from .core_tools import CoreToolset, FixtureStore
from .critic import Critic
from .curation import (
    iterations_for_category,
    judge_answer,
    knowledge_filter,
    load_items,
    minmax_sample,
    policy_judge,
    save_items,
)
from .embeddings import NgramHashEmbedder
from .policy import PolicyAdapter, PolicyConfig
from .registry import EmptyLibrary, StorageFailure, ToolRegistry
from .sandbox import SandboxExecutor, SandboxSpec, SandboxTestRunner
from .task_loop import TaskConfig, TaskRunner

EX_USAGE = 64

ENV_PREFIX = "TOOLSMITH_"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        _error_record("usage", message)
        raise SystemExit(EX_USAGE)


def _error_record(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _env_default(name: str, fallback: Any = None) -> Any:
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), fallback)


def _load_config_file(path: Optional[str]) -> dict[str, Any]:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _setting(args: argparse.Namespace, config: dict[str, Any], key: str, default: Any = None) -> Any:
    value = getattr(args, key, None)
    if value is not None:
        return value
    env = _env_default(key)
    if env is not None:
        return env
    return config.get(key, default)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="toolsmith", description=__doc__)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--registry", help="registry root directory")
    parser.add_argument("--endpoint", help="chat-completion endpoint URL")
    parser.add_argument("--model", help="model name sent to the endpoint")
    parser.add_argument("--mode", choices=["live", "replay", "record"], default=None)
    parser.add_argument("--transcript", help="transcript path for record/replay")
    parser.add_argument("--max-rounds", type=int, dest="max_rounds")
    parser.add_argument("--timeout-ms", type=int, dest="timeout_ms")
    parser.add_argument("--seed", type=int, help="random seed where applicable")
    parser.add_argument("--fixtures", help="core-tool fixture directory")
    parser.add_argument("--harness", help="test-harness entry file for the sandbox")
    parser.add_argument("--log-file", dest="log_file", help="run-log JSONL output path")
    parser.add_argument("-v", "--verbose", action="count", default=0)

    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one task through the loop")
    run.add_argument("query")

    build = sub.add_parser("build", help="build a tool from a ticket file")
    build.add_argument("ticket_file")

    cons = sub.add_parser("consolidate", help="organize and prune the tool memory")
    cons.add_argument("policy_file", nargs="?")
    cons.add_argument("--dry-run", action="store_true", dest="dry_run")

    curate = sub.add_parser("curate", help="benchmark curation pipeline")
    curate_sub = curate.add_subparsers(dest="curate_command", required=True)

    cfilter = curate_sub.add_parser("filter", help="drop items answerable without tools")
    cfilter.add_argument("--input", required=True)
    cfilter.add_argument("--output", required=True)

    csample = curate_sub.add_parser("sample", help="min-max diversity sampling")
    csample.add_argument("--input", required=True)
    csample.add_argument("--output", required=True)
    csample.add_argument("--seed-count", type=int, required=True, dest="seed_count")
    csample.add_argument("--iterations", type=int, default=None)
    csample.add_argument(
        "--scope",
        choices=["per-category", "global"],
        default="per-category",
        help="run the sampler per category (default) or over the whole pool",
    )

    cjudge = curate_sub.add_parser("judge", help="compare predicted vs reference answers")
    cjudge.add_argument("--predicted", required=True)
    cjudge.add_argument("--reference", required=True)

    stats = sub.add_parser("stats", help="library size and reuse metrics")
    stats.add_argument("--reuse", type=int, nargs="+", default=[1, 5, 10])

    replay = sub.add_parser("replay", help="run a task strictly from a transcript")
    replay.add_argument("query")

    return parser


def _adapter(args: argparse.Namespace, config: dict[str, Any], mode_override: Optional[str] = None) -> PolicyAdapter:
    mode = mode_override or _setting(args, config, "mode", "replay")
    transcript = _setting(args, config, "transcript")
    cfg = PolicyConfig(
        endpoint_url=_setting(args, config, "endpoint", "") or "",
        model_name=_setting(args, config, "model", "") or "",
        mode=mode,
        transcript_path=Path(transcript) if transcript else None,
    )
    return PolicyAdapter(cfg)


def _registry(args: argparse.Namespace, config: dict[str, Any]) -> ToolRegistry:
    root = _setting(args, config, "registry", "registry")
    return ToolRegistry(root)


def _sandbox_spec(args: argparse.Namespace, config: dict[str, Any]) -> SandboxSpec:
    timeout_ms = _setting(args, config, "timeout_ms", 30_000)
    harness = _setting(args, config, "harness")
    return SandboxSpec(
        timeout_ms=int(timeout_ms),
        harness_command=(sys.executable, str(harness)) if harness else None,
    )


def _core_toolset(args: argparse.Namespace, config: dict[str, Any], adapter: PolicyAdapter) -> CoreToolset:
    fixtures_dir = _setting(args, config, "fixtures")
    fixtures = FixtureStore.from_dir(fixtures_dir) if fixtures_dir else FixtureStore()

    def summarize(goal: str, content: str) -> str:
        from .policy import ChatMessage
        from .prompts import WEB_SUMMARY_PROMPT

        return adapter.complete(
            [
                ChatMessage("system", WEB_SUMMARY_PROMPT),
                ChatMessage("user", f"Goal: {goal}\n\nContent:\n{content}"),
            ]
        )

    return CoreToolset(fixtures, summarizer=summarize)


def _runner(args: argparse.Namespace, config: dict[str, Any], mode_override: Optional[str] = None) -> TaskRunner:
    adapter = _adapter(args, config, mode_override)
    registry = _registry(args, config)
    spec = _sandbox_spec(args, config)
    builder = BuildLoop(
        adapter,
        Critic(adapter),
        SandboxTestRunner(spec),
        registry,
        BuildConfig(),
    )
    log_stream = open(args.log_file, "a", encoding="utf-8") if args.log_file else None
    return TaskRunner(
        adapter,
        registry,
        _core_toolset(args, config, adapter),
        SandboxExecutor(spec),
        builder,
        TaskConfig(max_rounds=int(_setting(args, config, "max_rounds", 12))),
        log_stream=log_stream,
    )


def _cmd_run(args: argparse.Namespace, config: dict[str, Any], mode_override: Optional[str] = None) -> int:
    runner = _runner(args, config, mode_override)
    result = runner.run_task(args.query)
    if result.status == "aborted":
        _error_record("aborted", "task aborted before completion")
        print(json.dumps(result.to_dict(), sort_keys=True))
        return 1
    if result.answer is not None:
        print(result.answer)
    print(json.dumps(result.to_dict(), sort_keys=True))
    return 0


def _cmd_build(args: argparse.Namespace, config: dict[str, Any]) -> int:
    data = json.loads(Path(args.ticket_file).read_text(encoding="utf-8"))
    ticket = BuildTicket(
        id=data.get("id", "cli:t1"),
        context_summary=data.get("context_summary", ""),
        requirement=data["requirement"],
        proposed_name=data["proposed_name"],
        io_schema_hint=data.get("io_schema_hint"),
        origin_task=data.get("origin_task", "cli"),
    )
    adapter = _adapter(args, config)
    registry = _registry(args, config)
    spec = _sandbox_spec(args, config)
    loop = BuildLoop(adapter, Critic(adapter), SandboxTestRunner(spec), registry, BuildConfig())
    try:
        package = loop.run_build(ticket)
    except BuildError as exc:
        _error_record("build_failed", str(exc))
        return 1
    print(package.name)
    return 0


def _cmd_consolidate(args: argparse.Namespace, config: dict[str, Any]) -> int:
    policy_data = json.loads(Path(args.policy_file).read_text(encoding="utf-8")) if args.policy_file else {}
    if "category_labels" in policy_data:
        policy_data["category_labels"] = tuple(policy_data["category_labels"])
    policy = ConsolidationPolicy(**policy_data)
    registry = _registry(args, config)
    snapshot = registry.snapshot()
    new_memory, report = consolidate(snapshot, registry.events(), policy)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=1))
    if args.dry_run:
        return 0
    try:
        generation = registry.commit(new_memory)
    except StorageFailure as exc:
        _error_record("storage", str(exc))
        return 1
    print(f"generation {generation}")
    return 0


def _cmd_curate(args: argparse.Namespace, config: dict[str, Any]) -> int:
    if args.curate_command == "judge":
        print("true" if judge_answer(args.predicted, args.reference) else "false")
        return 0
    embedder = NgramHashEmbedder()
    items = load_items(args.input, embedder=embedder)
    if args.curate_command == "filter":
        adapter = _adapter(args, config)
        outcome = knowledge_filter(items, adapter, judge=policy_judge(adapter))
        extra = {
            item.id: {"undetermined": True}
            for item in outcome.retained
            if item.id in outcome.undetermined
        }
        save_items(args.output, outcome.retained, extra=extra)
        print(
            json.dumps(
                {
                    "retained": len(outcome.retained),
                    "dropped": len(outcome.dropped),
                    "undetermined": len(outcome.undetermined),
                },
                sort_keys=True,
            )
        )
        return 0
    # sample
    seed = int(_setting(args, config, "seed", 0) or 0)
    scopes: dict[Optional[str], list] = {}
    if args.scope == "per-category":
        for item in items:
            scopes.setdefault(item.category, []).append(item)
    else:
        scopes[None] = list(items)
    selected_rows: list = []
    extra: dict[str, dict[str, Any]] = {}
    by_id = {item.id: item for item in items}
    for category in sorted(scopes, key=lambda c: c or ""):
        group = scopes[category]
        iterations = (
            args.iterations
            if args.iterations is not None
            else iterations_for_category(category)
        )
        state = minmax_sample(group, args.seed_count, iterations, seed)
        for rank, item_id in enumerate(state.selected):
            selected_rows.append(by_id[item_id])
            extra[item_id] = {
                "selection_rank": rank,
                "seeded": rank < args.seed_count,
            }
    save_items(args.output, selected_rows, extra=extra)
    print(json.dumps({"selected": len(selected_rows)}, sort_keys=True))
    return 0


def _cmd_stats(args: argparse.Namespace, config: dict[str, Any]) -> int:
    registry = _registry(args, config)
    print(f"created tools: {len(registry.created)}")
    for k in args.reuse:
        try:
            value = registry.reuse_at_k(k)
        except EmptyLibrary:
            _error_record("empty_library", "no created tools to measure")
            return 1
        print(f"reuse@{k} = {float(value):.3f}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = _load_config_file(args.config or _env_default("config"))
        if args.command == "run":
            return _cmd_run(args, config)
        if args.command == "replay":
            return _cmd_run(args, config, mode_override="replay")
        if args.command == "build":
            return _cmd_build(args, config)
        if args.command == "consolidate":
            return _cmd_consolidate(args, config)
        if args.command == "curate":
            return _cmd_curate(args, config)
        if args.command == "stats":
            return _cmd_stats(args, config)
        parser.error(f"unknown command {args.command!r}")
        return EX_USAGE
    except (FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        _error_record(type(exc).__name__, str(exc))
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
