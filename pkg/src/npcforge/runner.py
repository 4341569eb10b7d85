"""Batch evaluation and interactive chat drivers.

Both consume a RunConfig, which the CLI fills from a JSON file plus flag
overrides. Evaluation replays every corpus instance through the turn
pipeline and scores the outputs; chat runs the same pipeline over lines
from a stream.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence, TextIO

from . import data_path
from . import gateway, memory, metrics
from .corpus import Corpus, TaskInstance, load_corpus
from .errors import EmptySequence, SchemaError, TurnFailed
from .gateway import MockBackend, OpenAICompatBackend
from .metrics import (
    DEFAULT_TASK1_WEIGHTS,
    DEFAULT_TASK2_WEIGHTS,
    EvalReport,
    FunctionCallRecord,
    TokenEmbeddingSequence,
    tokenize,
)
from .pipeline import (
    EventLog,
    PipelineConfig,
    TurnOutcome,
    config_for_track,
    run_turn,
    split_strategies,
)
from .prompts import Track
from .session import Session, Speaker, append_turn
from .tools import ToolCall, ToolRegistry, load_registry
from .world import NpcProfile, RoleKind, World, load_world

BACKEND_CHOICES = ("mock", "mock-gold", "mock-empty", "openai")

# Backends scripted per instance can run in parallel; one shared script
# would be consumed in nondeterministic order, so it forces workers=1.
_PER_INSTANCE_BACKENDS = ("mock-gold", "mock-empty", "openai")


@dataclass
class RunConfig:
    """Everything a batch eval, chat session, or server needs to start."""

    world_file: str = str(data_path("world_demo.json"))
    corpus_file: str = str(data_path("corpus_demo.json"))
    registry_files: tuple[str, ...] = (
        str(data_path("registry_merchant.json")),
        str(data_path("registry_guild.json")),
    )
    track: str = "api"
    strategies: tuple[str, ...] | None = None
    backend: str = "mock-gold"
    mock_script: str | None = None
    model: str = gateway.DEFAULT_MODEL
    npc_id: str = "elda"
    scene: str = "weapon_shop_evening"
    index_file: str | None = None
    embed_dim: int = 16
    retrieval_k: int = memory.DEFAULT_K
    retrieval_min_sim: float = memory.DEFAULT_MIN_SIM
    refine: bool = False
    refine_threshold: float = memory.DEFAULT_REFINE_THRESHOLD
    history_window: int = 6
    max_output_tokens: int = 200
    template_dir: str | None = None
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    weights_file: str | None = None
    report_out: str | None = None
    transcript_out: str | None = None
    event_log: str | None = None
    verbose: bool = False

    def __post_init__(self) -> None:
        if self.backend not in BACKEND_CHOICES:
            raise ValueError(f"unknown backend {self.backend!r}; pick from {BACKEND_CHOICES}")
        Track.parse(self.track)
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def config_from_file(path: str | Path) -> RunConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise SchemaError(f"run config {path} must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise SchemaError(f"run config {path} has unknown keys: {unknown}")
    if "registry_files" in doc:
        doc["registry_files"] = tuple(str(p) for p in doc["registry_files"])
    if "strategies" in doc and doc["strategies"] is not None:
        doc["strategies"] = tuple(str(s) for s in doc["strategies"])
    return RunConfig(**doc)


def load_registries(paths: Sequence[str | Path]) -> dict[RoleKind, ToolRegistry]:
    """Map role kinds to registries using each file's 'role' key.

    A file without a role becomes the fallback for every kind not bound
    by another file.
    """
    bound: dict[RoleKind, ToolRegistry] = {}
    fallback: ToolRegistry | None = None
    for path in paths:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        registry = load_registry(path)
        role = doc.get("role") if isinstance(doc, dict) else None
        if role is None:
            fallback = registry
            continue
        try:
            kind = RoleKind(str(role))
        except ValueError as exc:
            raise SchemaError(f"registry {path}: unknown role {role!r}", field="role") from exc
        bound[kind] = registry
    if fallback is not None:
        for kind in RoleKind:
            bound.setdefault(kind, fallback)
    return bound


_EMPTY_REGISTRY = ToolRegistry(schemas=(), executors={})


def registry_for(npc: NpcProfile, registries: Mapping[RoleKind, ToolRegistry]) -> ToolRegistry:
    return registries.get(npc.role.kind, _EMPTY_REGISTRY)


# -- backend selection ------------------------------------------------------------


def _gold_script(instance: TaskInstance) -> MockBackend:
    calls = [call.to_dict() for call in instance.gold_functions or ()]
    return MockBackend(
        [json.dumps(calls, ensure_ascii=False), instance.gold_response or ""]
    )


def _empty_script(instance: TaskInstance) -> MockBackend:
    return MockBackend(["", ""])


def backend_factory(config: RunConfig) -> Callable[[TaskInstance], gateway.Backend]:
    """Per-instance backend constructor for batch eval."""
    if config.backend == "mock-gold":
        return _gold_script
    if config.backend == "mock-empty":
        return _empty_script
    if config.backend == "openai":
        shared = OpenAICompatBackend(model=config.model)
        return lambda instance: shared
    if config.mock_script is None:
        raise ValueError("backend 'mock' needs a mock_script file")
    shared_mock = gateway.load_mock_script(config.mock_script)
    return lambda instance: shared_mock


def chat_backend(config: RunConfig) -> gateway.Backend:
    """Backend for interactive chat; gold-scripted modes make no sense here."""
    if config.backend == "openai":
        return OpenAICompatBackend(model=config.model)
    if config.backend != "mock":
        raise ValueError(
            f"backend {config.backend!r} is eval-only; chat takes 'mock' or 'openai'"
        )
    script = config.mock_script or str(data_path("mock_chat_demo.json"))
    return gateway.load_mock_script(script)


# -- batch evaluation -------------------------------------------------------------


def _session_for(instance: TaskInstance) -> Session:
    session = Session(id=instance.id, npc=instance.npc, world=instance.world)
    for i, turn in enumerate(instance.history):
        session = append_turn(session, replace(turn, timestamp=i))
    return session


def _base_pipeline_config(config: RunConfig, world: World) -> PipelineConfig:
    track = Track.parse(config.track)
    overrides: dict[str, Any] = {
        "history_window": config.history_window,
        "max_output_tokens": config.max_output_tokens,
        "template_dir": config.template_dir,
        "retrieval_k": config.retrieval_k,
        "retrieval_min_sim": config.retrieval_min_sim,
        "refine_enabled": config.refine,
        "refine_threshold": config.refine_threshold,
    }
    if config.event_log:
        overrides["event_log"] = EventLog(Path(config.event_log))
    if config.strategies is not None:
        function_set, dialogue_set = split_strategies(config.strategies)
        overrides["function_strategies"] = function_set
        overrides["dialogue_strategies"] = dialogue_set
    base = config_for_track(track, world=world, registry=_EMPTY_REGISTRY, backend=None, **overrides)
    if config.index_file:
        base.index = memory.load_index(config.index_file)
        base.provider = memory.HashEmbeddingProvider(dim=base.index.dim)
    return base


def run_instance(
    instance: TaskInstance,
    base: PipelineConfig,
    registry: ToolRegistry,
    backend: gateway.Backend,
) -> tuple[tuple[ToolCall, ...], str]:
    """One instance through the pipeline; budget failures score as-is."""
    config = replace(base, registry=registry, backend=backend)
    session = _session_for(instance)
    try:
        _, outcome = run_turn(session, instance.player_text, config)
    except TurnFailed as exc:
        outcome = exc.outcome
        if outcome is None:
            return (), ""
    return outcome.tool_calls, outcome.npc_text


def _load_weights(path: str | None) -> dict[str, dict[str, float]]:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise SchemaError(f"weights file {path} must be a JSON object")
    out: dict[str, dict[str, float]] = {}
    for group in ("tasks", "task1", "task2"):
        if group in doc:
            out[group] = {str(k): float(v) for k, v in doc[group].items()}
    return out


def _weighted(scores: Mapping[str, float], weights: Mapping[str, float]) -> float:
    return math.fsum(scores[name] * weight for name, weight in weights.items())


def _embed_f1_or_zero(
    pred: str, ref: str, provider: memory.HashEmbeddingProvider
) -> float:
    try:
        pred_seq = TokenEmbeddingSequence.from_text(pred, provider)
        ref_seq = TokenEmbeddingSequence.from_text(ref, provider)
        _, _, f1 = metrics.embed_f1(pred_seq, ref_seq)
    except EmptySequence:
        return 0.0
    return f1


def run_eval(config: RunConfig) -> EvalReport:
    """Score a corpus end to end and return the report.

    Tool-call instances contribute name/argument accuracy; response
    instances contribute BLEU-4, word F1, and embedding F1. Task-3
    corpora aggregate both halves.
    """
    corpus = load_corpus(config.corpus_file)
    world = load_world(config.world_file)
    registries = load_registries(config.registry_files)
    base = _base_pipeline_config(config, world)
    make_backend = backend_factory(config)
    provider = memory.HashEmbeddingProvider(dim=config.embed_dim)

    instances = list(corpus)

    def _one(instance: TaskInstance) -> tuple[tuple[ToolCall, ...], str]:
        registry = registry_for(instance.npc, registries)
        return run_instance(instance, base, registry, make_backend(instance))

    workers = config.workers if config.backend in _PER_INSTANCE_BACKENDS else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_one, instances))
    else:
        outputs = [_one(instance) for instance in instances]

    score_calls = corpus.task in (1, 3)
    score_text = corpus.task in (2, 3)

    pred_records: list[FunctionCallRecord] = []
    ref_records: list[FunctionCallRecord] = []
    rows: list[dict[str, float]] = []
    bleu_scores: list[float] = []
    word_scores: list[float] = []
    embed_scores: list[float] = []
    for instance, (calls, text) in zip(instances, outputs):
        row: dict[str, float] = {}
        if score_calls:
            pred = FunctionCallRecord.from_calls(calls)
            ref = FunctionCallRecord.from_calls(instance.gold_functions or ())
            pred_records.append(pred)
            ref_records.append(ref)
            row["acc_name"] = float(pred.names == ref.names)
            row["acc_args"] = float(pred.args == ref.args)
        if score_text:
            gold = instance.gold_response or ""
            bleu = metrics.bleu4(tokenize(text), tokenize(gold)).score
            word = metrics.word_f1(tokenize(text), tokenize(gold))
            emb = _embed_f1_or_zero(text, gold, provider)
            row["bleu4"] = bleu
            row["word_f1"] = word
            row["embed_f1"] = emb
            bleu_scores.append(bleu)
            word_scores.append(word)
            embed_scores.append(emb)
        rows.append(row)

    weights = _load_weights(config.weights_file)
    task1 = (
        {
            "acc_name": metrics.acc_name(pred_records, ref_records),
            "acc_args": metrics.acc_args(pred_records, ref_records),
        }
        if score_calls
        else {}
    )
    task2 = (
        {
            "embed_f1": metrics.macro_mean(embed_scores),
            "bleu4": metrics.macro_mean(bleu_scores),
            "word_f1": metrics.macro_mean(word_scores),
        }
        if score_text
        else {}
    )

    if corpus.task == 3:
        report = metrics.aggregate(
            task1,
            task2,
            task_weights=weights.get("tasks"),
            task1_weights=weights.get("task1"),
            task2_weights=weights.get("task2"),
            per_instance=rows,
        )
    elif corpus.task == 1:
        t1w = weights.get("task1", dict(DEFAULT_TASK1_WEIGHTS))
        score = _weighted(task1, t1w)
        report = EvalReport(
            per_instance=tuple(rows),
            corpus={**task1, "task1": score},
            weights={"task1": 1.0},
            aggregate=score,
            component_weights={"task1": t1w},
        )
    else:
        t2w = weights.get("task2", dict(DEFAULT_TASK2_WEIGHTS))
        score = _weighted(task2, t2w)
        report = EvalReport(
            per_instance=tuple(rows),
            corpus={**task2, "task2": score},
            weights={"task2": 1.0},
            aggregate=score,
            component_weights={"task2": t2w},
        )

    if config.report_out:
        metrics.write_report(report, config.report_out)
    return report


# -- interactive chat -------------------------------------------------------------


def _print_trace(outcome: TurnOutcome, out: TextIO) -> None:
    calls = [call.to_dict() for call in outcome.tool_calls]
    out.write(f"  [calls] {json.dumps(calls, ensure_ascii=False)}\n")
    for result in outcome.tool_results:
        if result.knowledge is not None:
            detail = f"{result.knowledge.subject}: {result.knowledge.body}"
        else:
            detail = result.message or ""
        detail = " / ".join(part.strip() for part in detail.splitlines() if part.strip())
        out.write(f"  [result] {result.status.value}: {detail}\n")
    for stage, hits in outcome.retrieval_hits.items():
        if hits:
            shown = ", ".join(f"{h.record_id}={h.similarity:.2f}" for h in hits)
            out.write(f"  [retrieval {stage}] {shown}\n")
    ledger = outcome.ledger
    out.write(
        f"  [budget] calls={ledger.calls_made} in={ledger.token_in_total}"
        f" out={ledger.token_out_total}\n"
    )
    if outcome.refined:
        out.write("  [refined] draft rewritten toward retrieved reply\n")


def run_chat(
    config: RunConfig,
    in_stream: TextIO,
    out_stream: TextIO,
) -> Session:
    """Line-oriented chat loop. '/quit' or EOF ends the session."""
    world = load_world(config.world_file)
    registries = load_registries(config.registry_files)
    npc = world.npc(config.npc_id)
    scene = world.scene(config.scene)
    base = _base_pipeline_config(config, world)
    pipeline_config = replace(
        base, registry=registry_for(npc, registries), backend=chat_backend(config)
    )
    strategy_names = tuple(
        s.value
        for s in (pipeline_config.function_strategies + pipeline_config.dialogue_strategies)
    )
    session = Session(
        id="chat",
        npc=npc,
        world=scene,
        strategy_set=strategy_names,
        budget_profile=config.track,
    )
    out_stream.write(f"{npc.id} is listening. '/quit' ends the session.\n")
    interactive = getattr(in_stream, "isatty", lambda: False)()
    while True:
        if interactive:
            out_stream.write("you> ")
            out_stream.flush()
        line = in_stream.readline()
        if not line:
            break
        text = line.strip()
        if not text:
            continue
        if text == "/quit":
            break
        try:
            session, outcome = run_turn(session, text, pipeline_config)
        except TurnFailed as exc:
            out_stream.write(f"[error] {exc.cause}\n")
            continue
        out_stream.write(f"{npc.id}> {outcome.npc_text}\n")
        if config.verbose:
            _print_trace(outcome, out_stream)
    if config.transcript_out:
        Path(config.transcript_out).write_text(
            json.dumps(session.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return session


# -- index construction -----------------------------------------------------------


def index_from_corpus(
    corpus: Corpus, provider: memory.EmbeddingProvider, source: str = "corpus"
) -> memory.RetrievalIndex:
    """Index every instance that has a reference response."""
    interactions = [
        (instance.id, instance.player_text, instance.gold_response, instance.gold_functions)
        for instance in corpus
        if instance.gold_response
    ]
    if not interactions:
        raise ValueError("corpus has no instances with a gold_response to index")
    return memory.build_index(interactions, provider, source=source)
