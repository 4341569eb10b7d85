"""Turn orchestration: one player utterance in, one NPC reply out.

Each turn runs five steps in a fixed order: build the function prompt,
call the backend for function calls, execute them against the NPC's
knowledge, build the dialogue prompt from the results, and call the
backend for the reply (optionally refined against retrieval memory).
Every step is recorded in an event log, and a failed turn leaves the
session exactly as it was.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import gateway, memory
from .errors import (
    BudgetExceeded,
    ParseError,
    SchemaError,
    Timeout,
    TransportError,
    TurnFailed,
    UnknownFunction,
    MissingParam,
    BadParamType,
    VersionError,
)
from .prompts import (
    Phase,
    PromptPlan,
    RenderedPrompt,
    StrategyId,
    Track,
    compose,
    default_few_shot_block,
)
from .session import DialogueTurn, Session, Speaker, append_turn
from .text import truncate_tokens
from .tools import (
    ToolCall,
    ToolRegistry,
    ToolResult,
    ResultStatus,
    format_tools,
    parse_tool_calls,
    registry_from_dict,
    validate_call,
    execute,
)
from .world import KnowledgeEntry, World, render_character_setting, world_from_dict

RECORDING_SCHEMA_VERSION = 1
DEFAULT_HISTORY_WINDOW = 6
DEFAULT_MAX_OUTPUT_TOKENS = 200

STEP_FUNCTION_PROMPT = "function_prompt"
STEP_FUNCTION_CALL = "function_call"
STEP_EXECUTE = "execute"
STEP_DIALOGUE_PROMPT = "dialogue_prompt"
STEP_DIALOGUE_CALL = "dialogue_call"
STEP_REFINE = "refine"
TURN_STEPS = (
    STEP_FUNCTION_PROMPT,
    STEP_FUNCTION_CALL,
    STEP_EXECUTE,
    STEP_DIALOGUE_PROMPT,
    STEP_DIALOGUE_CALL,
)

# Slots eligible for truncation when a prompt overruns the input budget,
# least precious first. Instructions and the character profile never shrink.
_DIALOGUE_TRUNCATION_ORDER = (
    "general_knowledge",
    "function_knowledge",
    "similar_responses",
    "few_shot_block",
)
_FUNCTION_TRUNCATION_ORDER = ("few_shot_block", "dialogue_history")
_OMITTED = "(omitted for budget)"


class EventLog:
    """Append-only line-JSON event sink: {ts, session, step, detail}."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.entries: list[dict[str, Any]] = []

    def emit(self, session_id: str, step: str, detail: Mapping[str, Any]) -> None:
        entry = {
            "ts": time.time(),
            "session": session_id,
            "step": step,
            "detail": dict(detail),
        }
        self.entries.append(entry)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def steps_for(self, session_id: str) -> list[str]:
        return [e["step"] for e in self.entries if e["session"] == session_id]


@dataclass(frozen=True)
class HitRef:
    """A retrieval hit as surfaced to callers: record id plus similarity."""

    record_id: str
    similarity: float

    def to_dict(self) -> dict[str, Any]:
        return {"record_id": self.record_id, "similarity": self.similarity}


@dataclass(frozen=True)
class TurnOutcome:
    npc_text: str
    tool_calls: tuple[ToolCall, ...]
    tool_results: tuple[ToolResult, ...]
    function_prompt: RenderedPrompt
    dialogue_prompt: RenderedPrompt
    ledger: gateway.CallLedger
    retrieval_hits: Mapping[str, tuple[HitRef, ...]]
    draft_text: str = ""
    refined: bool = False


@dataclass
class PipelineConfig:
    """Everything run_turn needs besides the session itself."""

    world: World
    registry: ToolRegistry
    backend: gateway.Backend
    profile: gateway.BudgetProfile
    function_strategies: tuple[StrategyId, ...] = ()
    dialogue_strategies: tuple[StrategyId, ...] = ()
    index: memory.RetrievalIndex | None = None
    provider: memory.EmbeddingProvider | None = None
    retrieval_k: int = memory.DEFAULT_K
    retrieval_min_sim: float = memory.DEFAULT_MIN_SIM
    refine_enabled: bool = False
    refine_threshold: float = memory.DEFAULT_REFINE_THRESHOLD
    history_window: int = DEFAULT_HISTORY_WINDOW
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    template_dir: str | Path | None = None
    event_log: EventLog | None = None


def split_strategies(
    names: Sequence[str | StrategyId],
) -> tuple[tuple[StrategyId, ...], tuple[StrategyId, ...]]:
    """Route a flat strategy list to the phases where each one is legal."""
    function_set: list[StrategyId] = []
    dialogue_set: list[StrategyId] = []
    for name in names:
        strategy = name if isinstance(name, StrategyId) else StrategyId.parse(name)
        if strategy is StrategyId.ZERO_SHOT:
            continue  # the baseline is the empty set
        if strategy not in {StrategyId.GUIDE, StrategyId.MOST_WORD, StrategyId.REMOVE_WORLD}:
            if strategy not in function_set:
                function_set.append(strategy)
        if strategy not in {StrategyId.COT, StrategyId.DEFINE_FUNCTION}:
            if strategy not in dialogue_set:
                dialogue_set.append(strategy)
    return tuple(function_set), tuple(dialogue_set)


def config_for_track(
    track: Track,
    world: World,
    registry: ToolRegistry,
    backend: gateway.Backend,
    **overrides: Any,
) -> PipelineConfig:
    """PipelineConfig preloaded with the track's default strategy sets."""
    from .prompts import default_plan

    profile = gateway.profile_for(track)
    function_strategies = default_plan(track, Phase.FUNCTION).strategies
    dialogue_strategies = default_plan(track, Phase.DIALOGUE).strategies
    config = PipelineConfig(
        world=world,
        registry=registry,
        backend=backend,
        profile=profile,
        function_strategies=function_strategies,
        dialogue_strategies=dialogue_strategies,
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def _entry_lines(entries: Sequence[KnowledgeEntry]) -> str:
    if not entries:
        return "(none)"
    return "\n".join(f"- {entry.subject}: {entry.body}" for entry in entries)


def _result_lines(results: Sequence[ToolResult]) -> str:
    lines = [
        f"- {result.knowledge.subject}: {result.knowledge.body}"
        for result in results
        if result.status is ResultStatus.OK and result.knowledge is not None
    ]
    return "\n".join(lines) if lines else "(none)"


def _render_history(turns: Sequence[DialogueTurn], window: int) -> str:
    recent = turns[-window:] if window > 0 else []
    lines = []
    for turn in recent:
        label = "Player" if turn.speaker is Speaker.PLAYER else "NPC"
        lines.append(f"{label}: {turn.text}")
    return "\n".join(lines)


def _history_messages(
    turns: Sequence[DialogueTurn], window: int, player_text: str
) -> tuple[tuple[str, str], ...]:
    recent = turns[-window:] if window > 0 else []
    messages = [(turn.speaker.value, turn.text) for turn in recent]
    messages.append((Speaker.PLAYER.value, player_text))
    return tuple(messages)


def _fit_prompt(
    plan: PromptPlan,
    truncation_order: Sequence[str],
    limit: int | None,
    template_dir: str | Path | None,
) -> tuple[PromptPlan, RenderedPrompt]:
    """Shrink droppable slots, then old history, until the prompt fits.

    Instructions and profile text are never touched; if nothing droppable
    remains and the prompt still overruns, the gateway's budget check has
    the final word.
    """
    rendered = compose(plan, template_dir)
    if limit is None:
        return plan, rendered
    for slot in truncation_order:
        if rendered.approx_tokens <= limit:
            return plan, rendered
        content = plan.slots.get(slot, "")
        if not content or content == _OMITTED:
            continue
        overshoot = rendered.approx_tokens - limit
        slot_tokens = gateway.approx_token_count(content)
        keep = slot_tokens - overshoot
        if keep > 0:
            plan = plan.with_slots(**{slot: truncate_tokens(content, keep)})
        else:
            plan = plan.with_slots(**{slot: _OMITTED})
        rendered = compose(plan, template_dir)
    while rendered.approx_tokens > limit and len(plan.history) > 1:
        plan = plan.with_history(plan.history[1:])
        rendered = compose(plan, template_dir)
    return plan, rendered


def run_turn(
    session: Session, player_text: str, config: PipelineConfig
) -> tuple[Session, TurnOutcome]:
    """Run one full turn; returns the grown session and what happened.

    On budget, timeout, or transport failure the session is returned
    untouched inside a TurnFailed carrying the partial outcome.
    """
    if not player_text.strip():
        raise ValueError("player_text must be non-empty")
    log = config.event_log
    ledger = gateway.CallLedger(
        utterance_id=f"{session.id}:{session.last_timestamp() + 1}"
    )
    hits_by_stage: dict[str, tuple[HitRef, ...]] = {}
    function_prompt: RenderedPrompt | None = None
    dialogue_prompt: RenderedPrompt | None = None
    calls: list[ToolCall] = []
    results: list[ToolResult] = []
    npc_text = ""
    draft = ""
    refined = False

    def _partial() -> TurnOutcome:
        empty = RenderedPrompt(phase=Phase.FUNCTION, system_text="")
        return TurnOutcome(
            npc_text=npc_text,
            tool_calls=tuple(calls),
            tool_results=tuple(results),
            function_prompt=function_prompt or empty,
            dialogue_prompt=dialogue_prompt or empty,
            ledger=copy.copy(ledger),
            retrieval_hits=dict(hits_by_stage),
            draft_text=draft,
            refined=refined,
        )

    try:
        # Step 1: function-calling prompt.
        query_vector = None
        retrieval_ready = config.index is not None and config.provider is not None
        if retrieval_ready:
            query_vector = memory.embed(config.provider, player_text)
        fplan = PromptPlan(
            phase=Phase.FUNCTION,
            strategies=config.function_strategies,
            slots={
                "formatted_tools": format_tools(config.registry),
                "dialogue_history": _render_history(session.turns, config.history_window),
            },
        )
        if StrategyId.FEW_SHOT in config.function_strategies:
            fplan = fplan.with_slots(
                few_shot_block=default_few_shot_block(Phase.FUNCTION, config.template_dir)
            )
        injected_function_stage = False
        if retrieval_ready:
            hits = memory.retrieve(
                config.index, query_vector, config.retrieval_k, config.retrieval_min_sim
            )
            assert not injected_function_stage
            fplan = memory.inject(memory.InjectionStage.FUNCTION_SELECTION, fplan, hits)
            injected_function_stage = True
            hits_by_stage[memory.InjectionStage.FUNCTION_SELECTION.value] = tuple(
                HitRef(record.id, similarity) for record, similarity in hits
            )
        fplan = fplan.with_history(((Speaker.PLAYER.value, player_text),))
        fplan, function_prompt = _fit_prompt(
            fplan,
            _FUNCTION_TRUNCATION_ORDER,
            config.profile.effective_input_limit(),
            config.template_dir,
        )
        if log:
            log.emit(
                session.id,
                STEP_FUNCTION_PROMPT,
                {
                    "approx_tokens": function_prompt.approx_tokens,
                    "strategies": [s.value for s in config.function_strategies],
                    "hits": [
                        h.to_dict()
                        for h in hits_by_stage.get(
                            memory.InjectionStage.FUNCTION_SELECTION.value, ()
                        )
                    ],
                },
            )

        # Step 2: function generation call.
        request = gateway.CompletionRequest(
            rendered=function_prompt,
            phase=Phase.FUNCTION,
            max_output_tokens=config.max_output_tokens,
            tool_schemas=config.registry.schemas,
        )
        response = gateway.complete(config.backend, request, ledger, config.profile)
        parse_failed = False
        if response.native_tool_calls is not None:
            raw_calls = list(response.native_tool_calls)
        else:
            try:
                raw_calls = parse_tool_calls(response.text)
            except ParseError:
                raw_calls = []
                parse_failed = True
        dropped = 0
        for call in raw_calls:
            try:
                calls.append(validate_call(config.registry, call))
            except (UnknownFunction, MissingParam, BadParamType):
                dropped += 1
        if log:
            log.emit(
                session.id,
                STEP_FUNCTION_CALL,
                {
                    "calls": [call.to_dict() for call in calls],
                    "dropped": dropped,
                    "parse_failed": parse_failed,
                },
            )

        # Step 3: execute the calls.
        knowledge = config.world.npc_knowledge(session.npc)
        for call in calls:
            results.append(execute(config.registry, call, knowledge))
        if log:
            log.emit(
                session.id,
                STEP_EXECUTE,
                {"statuses": [result.status.value for result in results]},
            )

        # Step 4: dialogue prompt from the gathered knowledge.
        dplan = PromptPlan(
            phase=Phase.DIALOGUE,
            strategies=config.dialogue_strategies,
            slots={
                "character_setting": render_character_setting(session.npc, session.world),
                "function_knowledge": _result_lines(results),
                "general_knowledge": _entry_lines(knowledge),
                "worldview": session.world.worldview_text or "(none)",
            },
        )
        if StrategyId.FEW_SHOT in config.dialogue_strategies:
            dplan = dplan.with_slots(
                few_shot_block=default_few_shot_block(Phase.DIALOGUE, config.template_dir)
            )
        best_hit = None
        injected_dialogue_stage = False
        if retrieval_ready:
            hits = memory.retrieve(
                config.index, query_vector, config.retrieval_k, config.retrieval_min_sim
            )
            assert not injected_dialogue_stage
            dplan = memory.inject(memory.InjectionStage.DIALOGUE_DRAFTING, dplan, hits)
            injected_dialogue_stage = True
            hits_by_stage[memory.InjectionStage.DIALOGUE_DRAFTING.value] = tuple(
                HitRef(record.id, similarity) for record, similarity in hits
            )
            best_hit = hits[0] if hits else None
        dplan = dplan.with_history(
            _history_messages(session.turns, config.history_window, player_text)
        )
        dplan, dialogue_prompt = _fit_prompt(
            dplan,
            _DIALOGUE_TRUNCATION_ORDER,
            config.profile.effective_input_limit(),
            config.template_dir,
        )
        if log:
            log.emit(
                session.id,
                STEP_DIALOGUE_PROMPT,
                {
                    "approx_tokens": dialogue_prompt.approx_tokens,
                    "strategies": [s.value for s in config.dialogue_strategies],
                    "hits": [
                        h.to_dict()
                        for h in hits_by_stage.get(
                            memory.InjectionStage.DIALOGUE_DRAFTING.value, ()
                        )
                    ],
                },
            )

        # Step 5: dialogue generation call.
        request = gateway.CompletionRequest(
            rendered=dialogue_prompt,
            phase=Phase.DIALOGUE,
            max_output_tokens=config.max_output_tokens,
        )
        response = gateway.complete(config.backend, request, ledger, config.profile)
        draft = response.text.strip()
        npc_text = draft
        if log:
            log.emit(
                session.id,
                STEP_DIALOGUE_CALL,
                {"draft": draft, "calls_made": ledger.calls_made},
            )

        if config.refine_enabled and best_hit is not None and draft:
            refined_text = memory.refine(
                draft,
                best_hit,
                config.backend,
                ledger,
                config.profile,
                threshold=config.refine_threshold,
                template_dir=config.template_dir,
            )
            refined = refined_text != draft
            npc_text = refined_text
            if log:
                log.emit(
                    session.id,
                    STEP_REFINE,
                    {"applied": refined, "calls_made": ledger.calls_made},
                )
    except (BudgetExceeded, Timeout, TransportError) as exc:
        raise TurnFailed(exc, outcome=_partial()) from exc

    timestamp = session.last_timestamp() + 1
    player_turn = DialogueTurn(
        speaker=Speaker.PLAYER, text=player_text, timestamp=timestamp
    )
    npc_turn = DialogueTurn(
        speaker=Speaker.NPC,
        text=npc_text,
        tool_calls=tuple(calls),
        tool_results=tuple(results),
        timestamp=timestamp + 1,
    )
    grown = append_turn(append_turn(session, player_turn), npc_turn)
    outcome = TurnOutcome(
        npc_text=npc_text,
        tool_calls=tuple(calls),
        tool_results=tuple(results),
        function_prompt=function_prompt,
        dialogue_prompt=dialogue_prompt,
        ledger=copy.copy(ledger),
        retrieval_hits=dict(hits_by_stage),
        draft_text=draft,
        refined=refined,
    )
    return grown, outcome


# -- outcome serialization and replay ---------------------------------------------

def rendered_to_dict(rendered: RenderedPrompt) -> dict[str, Any]:
    return {
        "phase": rendered.phase.value,
        "system_text": rendered.system_text,
        "messages": [list(m) for m in rendered.messages],
        "approx_tokens": rendered.approx_tokens,
    }


def ledger_to_dict(ledger: gateway.CallLedger) -> dict[str, Any]:
    return {
        "utterance_id": ledger.utterance_id,
        "calls_made": ledger.calls_made,
        "elapsed_ms": ledger.elapsed_ms,
        "token_in_total": ledger.token_in_total,
        "token_out_total": ledger.token_out_total,
    }


def outcome_to_dict(outcome: TurnOutcome) -> dict[str, Any]:
    return {
        "npc_text": outcome.npc_text,
        "tool_calls": [call.to_dict() for call in outcome.tool_calls],
        "tool_results": [result.to_dict() for result in outcome.tool_results],
        "function_prompt": rendered_to_dict(outcome.function_prompt),
        "dialogue_prompt": rendered_to_dict(outcome.dialogue_prompt),
        "ledger": ledger_to_dict(outcome.ledger),
        "retrieval_hits": {
            stage: [hit.to_dict() for hit in hits]
            for stage, hits in sorted(outcome.retrieval_hits.items())
        },
        "draft_text": outcome.draft_text,
        "refined": outcome.refined,
    }


def transcript_json(outcomes: Sequence[TurnOutcome]) -> str:
    """Canonical bytes for golden-transcript comparison."""
    return json.dumps(
        [outcome_to_dict(outcome) for outcome in outcomes],
        indent=2,
        ensure_ascii=False,
        sort_keys=True,
    ) + "\n"


def load_recording(path: str | Path) -> dict[str, Any]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"recording {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"recording {path} must be a JSON object")
    if doc.get("schema_version") != RECORDING_SCHEMA_VERSION:
        raise VersionError(
            f"recording {path}: unsupported schema_version {doc.get('schema_version')!r}"
        )
    for key in ("world", "registry", "npc_id", "scene", "player_inputs", "mock_script"):
        if key not in doc:
            raise SchemaError(f"recording {path} missing field {key!r}", field=key)
    return doc


def replay(path: str | Path, event_log: EventLog | None = None) -> list[TurnOutcome]:
    """Re-run a recorded session against its embedded mock script.

    Everything the run needs (world, registry, strategies, script, player
    inputs) lives inside the recording, so the outcomes are a pure
    function of the file's bytes.
    """
    doc = load_recording(path)
    world = world_from_dict(doc["world"])
    registry = registry_from_dict(doc["registry"])
    npc = world.npc(str(doc["npc_id"]))
    scene = world.scene(str(doc["scene"]))
    track = Track.parse(str(doc.get("track", "api")))
    backend = gateway.mock_backend_from_dict(doc["mock_script"])
    strategy_names = [str(s) for s in doc.get("strategies", ())]
    function_strategies, dialogue_strategies = split_strategies(strategy_names)
    config = PipelineConfig(
        world=world,
        registry=registry,
        backend=backend,
        profile=gateway.profile_for(track),
        function_strategies=function_strategies,
        dialogue_strategies=dialogue_strategies,
        refine_enabled=bool(doc.get("refine", {}).get("enabled", False)),
        refine_threshold=float(
            doc.get("refine", {}).get("threshold", memory.DEFAULT_REFINE_THRESHOLD)
        ),
        event_log=event_log,
    )
    retrieval = doc.get("retrieval")
    if retrieval:
        config.index = memory.index_from_dict(retrieval["index"])
        dim = config.index.dim
        config.provider = memory.HashEmbeddingProvider(dim=dim)
        config.retrieval_k = int(retrieval.get("k", memory.DEFAULT_K))
        config.retrieval_min_sim = float(retrieval.get("min_sim", memory.DEFAULT_MIN_SIM))
    session = Session(
        id=str(doc.get("session_id", "replay")),
        npc=npc,
        world=scene,
        strategy_set=tuple(strategy_names),
        budget_profile=track.value,
    )
    outcomes = []
    for player_text in doc["player_inputs"]:
        session, outcome = run_turn(session, str(player_text), config)
        outcomes.append(outcome)
    return outcomes


def replay_matches_golden(
    recording_path: str | Path, golden_path: str | Path
) -> tuple[bool, str]:
    """Replay and compare against a golden transcript, byte for byte."""
    produced = transcript_json(replay(recording_path))
    golden = Path(golden_path).read_text(encoding="utf-8")
    if produced == golden:
        return True, "transcripts identical"
    produced_lines = produced.splitlines()
    golden_lines = golden.splitlines()
    for i, (a, b) in enumerate(zip(produced_lines, golden_lines), start=1):
        if a != b:
            return False, f"first difference at line {i}: {a!r} != {b!r}"
    return False, (
        f"transcripts differ in length: {len(produced_lines)} vs {len(golden_lines)} lines"
    )
