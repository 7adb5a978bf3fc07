"""toolsmith: a tool-creating agent runtime.

A ReAct-style task loop that not only calls tools but builds the ones it is
missing: a build loop generates candidate code plus tests, runs them in a
sandbox, gates acceptance on an independent review, and registers the result
in a persistent tool memory that an offline consolidation pass keeps small
and useful. Benchmark-curation utilities (knowledge filter, min-max diversity
sampler, answer judge) live alongside.

Quick start:

    from toolsmith import (
        PolicyAdapter, PolicyConfig, ToolRegistry, CoreToolset, TaskRunner,
    )

    adapter = PolicyAdapter(PolicyConfig(mode="replay", transcript_path=path))
    registry = ToolRegistry("registry-root")
    runner = TaskRunner(adapter, registry, CoreToolset(), executor=None)
    result = runner.run_task("what is 3 + 4?")
"""

from .build_loop import (
    BuildConfig,
    BuildError,
    BuildExhausted,
    BuildLoop,
    BuildTicket,
    ToolCandidate,
    ToolPackage,
    make_ticket,
)
from .consolidation import (
    ConsolidationPolicy,
    ConsolidationReport,
    consolidate,
    normalize_code,
)
from .core_tools import (
    ArgSpec,
    BoundingBox,
    CoreToolset,
    FixtureStore,
    SchemaViolation,
    ToolDescriptor,
    validate_args,
)
from .critic import Critic, CritiqueResult
from .curation import (
    CandidateItem,
    EmbeddingVector,
    PoolExhausted,
    SamplerState,
    cosine_similarity,
    judge_answer,
    knowledge_filter,
    minmax_sample,
)
from .embeddings import NgramHashEmbedder, RemoteEmbedder, ZeroNorm
from .parsing import (
    AgentAction,
    CreateRequest,
    EmptyTurn,
    FinalAnswer,
    MalformedBlock,
    ModelTurn,
    MultipleActions,
    ParseError,
    Thought,
    ToolCall,
    ToolInvocation,
    parse_turn,
    render_observation,
    serialize_action,
)
from .policy import (
    ChatMessage,
    EndpointUnavailable,
    PolicyAdapter,
    PolicyConfig,
    ReplayMiss,
    Transcript,
    assemble_task_prompt,
    digest,
)
from .registry import (
    EmptyLibrary,
    StorageFailure,
    ToolMemory,
    ToolRecord,
    ToolRegistry,
    UsageEvent,
    reuse_at_k,
)
from .sandbox import (
    SandboxExecutor,
    SandboxResult,
    SandboxSpec,
    SandboxTestRunner,
    TestCase,
    TestReport,
    execute_tool,
    run_tests,
)
from .task_loop import (
    Observation,
    TaskConfig,
    TaskResult,
    TaskRunner,
    TaskState,
    ToolSource,
    identify_tool_source,
)

__version__ = "0.1.0"
