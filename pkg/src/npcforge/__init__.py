"""Persona-grounded game NPC agents.

Each player utterance runs a two-phase pipeline: a function-calling step
picks tools that fetch game knowledge, then a dialogue step answers in
character using the results. Prompts are composed from small named
strategies, budgets are enforced per utterance, and everything offline
runs against scripted mock backends so results are reproducible.
"""

from importlib import resources
from pathlib import Path

from .errors import (
    BadParamType,
    BadWeights,
    BudgetExceeded,
    DimMismatch,
    EmptySequence,
    GenerationExhausted,
    LengthMismatch,
    MissingParam,
    MissingSlot,
    NpcForgeError,
    ParseError,
    PhaseMismatch,
    ProviderError,
    SchemaError,
    Timeout,
    TransportError,
    TurnFailed,
    UnknownFunction,
    VersionError,
)
from .world import (
    KnowledgeEntry,
    KnowledgeKind,
    NpcProfile,
    Role,
    RoleKind,
    Season,
    World,
    WorldState,
    load_world,
    render_character_setting,
    world_from_dict,
)
from .tools import (
    ExecutorSpec,
    ParamSpec,
    ParamType,
    ResultStatus,
    ToolCall,
    ToolRegistry,
    ToolResult,
    ToolSchema,
    execute,
    format_tools,
    load_registry,
    parse_tool_calls,
    registry_from_dict,
    validate_call,
)
from .session import DialogueTurn, Session, Speaker, append_turn
from .prompts import (
    Phase,
    PromptPlan,
    RenderedPrompt,
    StrategyId,
    Track,
    compose,
    default_plan,
)
from .gateway import (
    API_TRACK_PROFILE,
    GPU_TRACK_PROFILE,
    BudgetProfile,
    CallLedger,
    CompletionRequest,
    CompletionResponse,
    MockBackend,
    OpenAICompatBackend,
    complete,
    load_mock_script,
    profile_for,
)
from .memory import (
    EmbeddingVector,
    HashEmbeddingProvider,
    InjectionStage,
    RetrievalIndex,
    RetrievalRecord,
    build_index,
    cosine,
    inject,
    load_index,
    refine,
    retrieve,
    save_index,
)
from .metrics import (
    EvalReport,
    acc_args,
    acc_name,
    aggregate,
    bleu4,
    embed_f1,
    tokenize,
    word_f1,
)
from .corpus import Corpus, GenerationKind, GenerationSpec, TaskInstance, generate_instances, load_corpus, save_corpus
from .pipeline import (
    EventLog,
    PipelineConfig,
    TurnOutcome,
    config_for_track,
    replay,
    replay_matches_golden,
    run_turn,
    split_strategies,
    transcript_json,
)

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Path to a packaged data file (demo world, registries, corpus)."""
    return Path(resources.files(__package__) / "data" / name)


__all__ = [
    "API_TRACK_PROFILE",
    "BadParamType",
    "BadWeights",
    "BudgetExceeded",
    "BudgetProfile",
    "CallLedger",
    "CompletionRequest",
    "CompletionResponse",
    "Corpus",
    "DialogueTurn",
    "DimMismatch",
    "EmbeddingVector",
    "EmptySequence",
    "EvalReport",
    "EventLog",
    "ExecutorSpec",
    "GPU_TRACK_PROFILE",
    "GenerationExhausted",
    "GenerationKind",
    "GenerationSpec",
    "HashEmbeddingProvider",
    "InjectionStage",
    "KnowledgeEntry",
    "KnowledgeKind",
    "LengthMismatch",
    "MissingParam",
    "MissingSlot",
    "MockBackend",
    "NpcForgeError",
    "NpcProfile",
    "OpenAICompatBackend",
    "ParamSpec",
    "ParamType",
    "ParseError",
    "Phase",
    "PhaseMismatch",
    "PipelineConfig",
    "PromptPlan",
    "ProviderError",
    "RenderedPrompt",
    "ResultStatus",
    "RetrievalIndex",
    "RetrievalRecord",
    "Role",
    "RoleKind",
    "SchemaError",
    "Season",
    "Session",
    "Speaker",
    "StrategyId",
    "TaskInstance",
    "Timeout",
    "ToolCall",
    "ToolRegistry",
    "ToolResult",
    "ToolSchema",
    "Track",
    "TransportError",
    "TurnFailed",
    "TurnOutcome",
    "UnknownFunction",
    "VersionError",
    "World",
    "WorldState",
    "acc_args",
    "acc_name",
    "aggregate",
    "append_turn",
    "bleu4",
    "build_index",
    "complete",
    "compose",
    "config_for_track",
    "cosine",
    "data_path",
    "default_plan",
    "embed_f1",
    "execute",
    "format_tools",
    "generate_instances",
    "inject",
    "load_corpus",
    "load_index",
    "load_mock_script",
    "load_registry",
    "load_world",
    "parse_tool_calls",
    "profile_for",
    "refine",
    "registry_from_dict",
    "render_character_setting",
    "replay",
    "replay_matches_golden",
    "retrieve",
    "run_turn",
    "save_corpus",
    "save_index",
    "split_strategies",
    "tokenize",
    "transcript_json",
    "validate_call",
    "word_f1",
    "world_from_dict",
]
