"""Task datasets: loading, validation, synthesis, and summary stats.

A corpus file carries one task id and a list of instances. Task 1
instances are scored on their gold function calls, task 2 on their gold
response, task 3 on both; loading enforces whichever applies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from . import gateway
from .errors import GenerationExhausted, SchemaError, VersionError
from .prompts import Phase, RenderedPrompt, fill_slots, load_plain_template
from .session import DialogueTurn
from .tools import (
    ToolCall,
    ToolRegistry,
    extract_json_payloads,
    format_tools,
    validate_call,
)
from .world import KnowledgeEntry, NpcProfile, WorldState

CORPUS_SCHEMA_VERSION = 1
VALID_TASKS = (1, 2, 3)


@dataclass(frozen=True)
class TaskInstance:
    """One scoring unit: a situated player utterance plus its gold targets."""

    id: str
    npc: NpcProfile
    world: WorldState
    player_text: str
    history: tuple[DialogueTurn, ...] = ()
    gold_functions: tuple[ToolCall, ...] | None = None
    gold_response: str | None = None
    reasoning: str | None = None

    def __post_init__(self) -> None:
        if not self.player_text.strip():
            raise ValueError(f"instance {self.id!r}: player_text is empty")


def validate_instance(instance: TaskInstance, task: int) -> None:
    """Check the instance carries the gold targets its task requires."""
    if task in (1, 3) and instance.gold_functions is None:
        raise SchemaError(
            f"instance {instance.id!r}: task {task} requires gold_functions",
            field="gold_functions",
        )
    if task in (2, 3) and not (instance.gold_response or "").strip():
        raise SchemaError(
            f"instance {instance.id!r}: task {task} requires gold_response",
            field="gold_response",
        )


@dataclass(frozen=True)
class Corpus:
    task: int
    instances: tuple[TaskInstance, ...]

    def __post_init__(self) -> None:
        if self.task not in VALID_TASKS:
            raise SchemaError(f"unknown task {self.task!r}", field="task")
        for instance in self.instances:
            validate_instance(instance, self.task)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[TaskInstance]:
        return iter(self.instances)


def instance_to_dict(instance: TaskInstance) -> dict[str, Any]:
    data: dict[str, Any] = {
        "id": instance.id,
        "npc": instance.npc.to_dict(),
        "world": instance.world.to_dict(),
        "player_text": instance.player_text,
    }
    if instance.history:
        data["history"] = [turn.to_dict() for turn in instance.history]
    if instance.gold_functions is not None:
        data["gold_functions"] = [call.to_dict() for call in instance.gold_functions]
    if instance.gold_response is not None:
        data["gold_response"] = instance.gold_response
    if instance.reasoning is not None:
        data["reasoning"] = instance.reasoning
    return data


def instance_from_dict(data: Mapping[str, Any], where: str = "instance") -> TaskInstance:
    try:
        npc = NpcProfile.from_dict(data["npc"])
        world = WorldState.from_dict(data["world"])
        history = tuple(DialogueTurn.from_dict(t) for t in data.get("history", []))
        gold = data.get("gold_functions")
        gold_functions = (
            tuple(ToolCall.from_dict(c) for c in gold) if gold is not None else None
        )
        return TaskInstance(
            id=str(data["id"]),
            npc=npc,
            world=world,
            player_text=str(data["player_text"]),
            history=history,
            gold_functions=gold_functions,
            gold_response=data.get("gold_response"),
            reasoning=data.get("reasoning"),
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: {exc}", field=str(exc)) from exc


def load_corpus(path: str | Path) -> Corpus:
    """Read and validate a corpus file; errors name the offending field."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"corpus file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"corpus file {path} must be a JSON object")
    version = doc.get("schema_version")
    if version != CORPUS_SCHEMA_VERSION:
        raise VersionError(f"corpus file {path}: unsupported schema_version {version!r}")
    if "task" not in doc or "instances" not in doc:
        raise SchemaError(f"corpus file {path} needs 'task' and 'instances'")
    raw_instances = doc["instances"]
    if not isinstance(raw_instances, list):
        raise SchemaError(f"corpus file {path}: 'instances' must be a list", field="instances")
    instances = tuple(
        instance_from_dict(raw, where=f"{path}: instances[{i}]")
        for i, raw in enumerate(raw_instances)
    )
    return Corpus(task=int(doc["task"]), instances=instances)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    doc = {
        "schema_version": CORPUS_SCHEMA_VERSION,
        "task": corpus.task,
        "instances": [instance_to_dict(instance) for instance in corpus.instances],
    }
    Path(path).write_text(
        json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


# -- synthesis -------------------------------------------------------------------

class GenerationKind(str, Enum):
    MULTI_TURN = "multi-turn"
    MULTI_TURN_REASONING = "multi-turn-reasoning"
    FUNCTION_CALLING = "function-calling"

    @classmethod
    def parse(cls, text: str) -> "GenerationKind":
        key = text.strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        known = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown generation kind {text!r}; expected one of: {known}")


_KIND_TEMPLATES = {
    GenerationKind.MULTI_TURN: "datagen/multi_turn.txt",
    GenerationKind.MULTI_TURN_REASONING: "datagen/multi_turn_reasoning.txt",
    GenerationKind.FUNCTION_CALLING: "datagen/function_calling.txt",
}


@dataclass(frozen=True)
class GenerationSpec:
    """What to synthesize: a kind, a target count, and the NPC context."""

    kind: GenerationKind
    count: int
    npc: NpcProfile
    world: WorldState
    template_id: str = ""
    seed_player_text: str = ""
    seed_npc_text: str = ""

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("generation count must be >= 1")

    def template(self) -> str:
        return self.template_id or _KIND_TEMPLATES[self.kind]


def _knowledge_block(knowledge: Sequence[KnowledgeEntry]) -> str:
    if not knowledge:
        return "(none)"
    return "\n".join(f"- {entry.subject}: {entry.body}" for entry in knowledge)


def _generation_slots(
    spec: GenerationSpec,
    registry: ToolRegistry | None,
    knowledge: Sequence[KnowledgeEntry],
) -> dict[str, str]:
    slots = {
        "npc_role": spec.npc.role.display(),
        "npc_persona": spec.npc.persona_text,
        "knowledge": _knowledge_block(knowledge),
        "player_dialogue": spec.seed_player_text,
        "npc_response": spec.seed_npc_text,
    }
    if registry is not None:
        slots["formatted_tools"] = format_tools(registry)
    return slots


def _parse_generation(raw: str) -> Mapping[str, Any] | None:
    """First JSON object in the output, or None when there is none."""
    for payload in extract_json_payloads(raw):
        if not payload:
            continue
        try:
            data = json.loads(payload)
        except json.JSONDecodeError:
            continue
        if isinstance(data, Mapping):
            return data
    return None


def _instance_from_generation(
    spec: GenerationSpec,
    registry: ToolRegistry | None,
    data: Mapping[str, Any],
    instance_id: str,
) -> TaskInstance | None:
    """Validate one raw generation; None means discard and retry."""
    player_text = str(data.get("player_dialogue") or "").strip()
    if not player_text:
        return None
    if spec.kind is GenerationKind.FUNCTION_CALLING:
        raw_calls = data.get("gold_functions")
        if not isinstance(raw_calls, list):
            return None
        try:
            calls = tuple(ToolCall.from_dict(c) for c in raw_calls)
            if registry is not None:
                for call in calls:
                    validate_call(registry, call)
        except Exception:
            return None
        return TaskInstance(
            id=instance_id,
            npc=spec.npc,
            world=spec.world,
            player_text=player_text,
            gold_functions=calls,
        )
    npc_response = str(data.get("npc_response") or "").strip()
    if not npc_response:
        return None
    reasoning = None
    if spec.kind is GenerationKind.MULTI_TURN_REASONING:
        reasoning = str(data.get("npc_reasoning") or "").strip()
        if not reasoning:
            return None
    return TaskInstance(
        id=instance_id,
        npc=spec.npc,
        world=spec.world,
        player_text=player_text,
        gold_response=npc_response,
        reasoning=reasoning,
    )


def generate_instances(
    spec: GenerationSpec,
    backend: gateway.Backend,
    registry: ToolRegistry | None = None,
    knowledge: Sequence[KnowledgeEntry] = (),
    profile: gateway.BudgetProfile = gateway.GPU_TRACK_PROFILE,
    max_attempts: int | None = None,
    template_dir: str | Path | None = None,
    max_output_tokens: int = 400,
) -> list[TaskInstance]:
    """Synthesize exactly spec.count validated instances.

    Invalid generations (unparseable, empty fields, calls that fail
    registry validation) are discarded and retried; when the attempt cap
    runs out first, GenerationExhausted reports the shortfall.
    """
    if spec.kind is GenerationKind.FUNCTION_CALLING and registry is None:
        raise ValueError("function-calling generation requires a registry")
    cap = max_attempts if max_attempts is not None else 4 * spec.count
    template = load_plain_template(spec.template(), template_dir)
    system_text = fill_slots(template, _generation_slots(spec, registry, knowledge))
    rendered = RenderedPrompt(
        phase=Phase.FUNCTION,
        system_text=system_text,
        approx_tokens=gateway.approx_token_count(system_text),
    )
    accepted: list[TaskInstance] = []
    attempts = 0
    while len(accepted) < spec.count and attempts < cap:
        attempts += 1
        ledger = gateway.CallLedger(utterance_id=f"datagen-{attempts}")
        request = gateway.CompletionRequest(
            rendered=rendered,
            phase=Phase.FUNCTION,
            max_output_tokens=max_output_tokens,
        )
        response = gateway.complete(backend, request, ledger, profile)
        data = _parse_generation(response.text)
        if data is None:
            continue
        instance = _instance_from_generation(
            spec, registry, data, f"gen-{spec.kind.value}-{len(accepted) + 1:04d}"
        )
        if instance is not None:
            accepted.append(instance)
    if len(accepted) < spec.count:
        raise GenerationExhausted(
            f"{len(accepted)}/{spec.count} valid instances after {attempts} attempts"
        )
    return accepted


# -- stats -----------------------------------------------------------------------

def corpus_stats(corpus: Corpus) -> dict[str, Any]:
    """Distribution summary: roles, seasons, weather, gold coverage."""
    roles: dict[str, int] = {}
    seasons: dict[str, int] = {}
    weather: dict[str, int] = {}
    with_functions = 0
    with_response = 0
    for instance in corpus:
        role_key = instance.npc.role.kind.value
        roles[role_key] = roles.get(role_key, 0) + 1
        season_key = instance.world.season.value
        seasons[season_key] = seasons.get(season_key, 0) + 1
        weather_key = instance.world.weather
        weather[weather_key] = weather.get(weather_key, 0) + 1
        if instance.gold_functions is not None:
            with_functions += 1
        if instance.gold_response is not None:
            with_response += 1
    total = len(corpus)
    return {
        "total": total,
        "task": corpus.task,
        "roles": dict(sorted(roles.items())),
        "seasons": dict(sorted(seasons.items())),
        "weather": dict(sorted(weather.items())),
        "with_gold_functions": with_functions,
        "with_gold_response": with_response,
        "function_presence_ratio": (with_functions / total) if total else 0.0,
    }
