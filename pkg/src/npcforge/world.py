"""Domain types for NPCs, scenes, and world knowledge.

A world definition file (JSON, ``schema_version: 1``) carries the NPC roster,
the knowledge base, the worldview text, and named scenes. See README for the
exact schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .errors import SchemaError, VersionError

WORLD_SCHEMA_VERSION = 1


class RoleKind(str, Enum):
    MERCHANT = "merchant"
    GUILD_RECEPTIONIST = "guild_receptionist"
    OTHER = "other"


@dataclass(frozen=True)
class Role:
    """NPC role: merchant, guild receptionist, or a free-form label."""

    kind: RoleKind
    label: str = ""

    @classmethod
    def merchant(cls) -> "Role":
        return cls(RoleKind.MERCHANT)

    @classmethod
    def guild_receptionist(cls) -> "Role":
        return cls(RoleKind.GUILD_RECEPTIONIST)

    @classmethod
    def other(cls, label: str) -> "Role":
        return cls(RoleKind.OTHER, label)

    @classmethod
    def parse(cls, value: str) -> "Role":
        norm = value.strip().lower().replace(" ", "_")
        if norm == RoleKind.MERCHANT.value:
            return cls.merchant()
        if norm == RoleKind.GUILD_RECEPTIONIST.value:
            return cls.guild_receptionist()
        return cls.other(value.strip())

    def display(self) -> str:
        if self.kind is RoleKind.MERCHANT:
            return "Merchant"
        if self.kind is RoleKind.GUILD_RECEPTIONIST:
            return "Guild Receptionist"
        return self.label

    def to_json(self) -> str:
        return self.label if self.kind is RoleKind.OTHER else self.kind.value


class Season(str, Enum):
    EARLY_SPRING = "early_spring"
    LATE_SPRING = "late_spring"
    EARLY_SUMMER = "early_summer"
    LATE_SUMMER = "late_summer"
    EARLY_AUTUMN = "early_autumn"
    LATE_AUTUMN = "late_autumn"
    EARLY_WINTER = "early_winter"
    LATE_WINTER = "late_winter"

    def display(self) -> str:
        return self.value.replace("_", " ").title()


class KnowledgeKind(str, Enum):
    ITEM_DESCRIPTION = "item_description"
    QUEST_INFO = "quest_info"
    GENERAL = "general"


@dataclass(frozen=True)
class KnowledgeEntry:
    id: str
    kind: KnowledgeKind
    subject: str
    body: str

    def __post_init__(self):
        if not self.body:
            raise ValueError(f"knowledge entry {self.id!r} has empty body")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "subject": self.subject,
            "body": self.body,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "KnowledgeEntry":
        try:
            return cls(
                id=str(data["id"]),
                kind=KnowledgeKind(data["kind"]),
                subject=str(data["subject"]),
                body=str(data["body"]),
            )
        except KeyError as exc:
            raise SchemaError(f"knowledge entry missing field {exc}", field=str(exc)) from exc
        except ValueError as exc:
            raise SchemaError(f"bad knowledge entry: {exc}", field="kind") from exc


@dataclass(frozen=True)
class NpcProfile:
    """Persona and role that ground every prompt for one NPC."""

    id: str
    role: Role
    persona_text: str
    age: int | None = None
    gender: str | None = None
    knowledge_refs: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.persona_text:
            raise ValueError(f"npc {self.id!r} has empty persona_text")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "role": self.role.to_json(),
            "persona_text": self.persona_text,
            "knowledge_refs": list(self.knowledge_refs),
        }
        if self.age is not None:
            out["age"] = self.age
        if self.gender is not None:
            out["gender"] = self.gender
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NpcProfile":
        for key in ("id", "role", "persona_text"):
            if key not in data:
                raise SchemaError(f"npc missing field {key!r}", field=key)
        age = data.get("age")
        if age is not None and not isinstance(age, int):
            raise SchemaError("npc age must be an integer", field="age")
        return cls(
            id=str(data["id"]),
            role=Role.parse(str(data["role"])),
            persona_text=str(data["persona_text"]),
            age=age,
            gender=None if data.get("gender") is None else str(data["gender"]),
            knowledge_refs=tuple(str(r) for r in data.get("knowledge_refs", ())),
        )


@dataclass(frozen=True)
class WorldState:
    """Scene conditions plus the game world's worldview text."""

    season: Season
    time_of_day: int
    weather: str
    location: str
    worldview_text: str = ""

    def __post_init__(self):
        if not 0 <= self.time_of_day <= 23:
            raise ValueError(f"time_of_day {self.time_of_day} outside [0, 23]")

    def scene_display(self) -> str:
        return (
            f"{self.season.display()}, {format_hour(self.time_of_day)}, "
            f"{self.weather}, at the {self.location}"
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "season": self.season.value,
            "time_of_day": self.time_of_day,
            "weather": self.weather,
            "location": self.location,
            "worldview_text": self.worldview_text,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WorldState":
        for key in ("season", "time_of_day", "weather", "location"):
            if key not in data:
                raise SchemaError(f"world state missing field {key!r}", field=key)
        try:
            season = Season(data["season"])
        except ValueError as exc:
            raise SchemaError(f"unknown season {data['season']!r}", field="season") from exc
        time_of_day = data["time_of_day"]
        if not isinstance(time_of_day, int) or not 0 <= time_of_day <= 23:
            raise SchemaError("time_of_day must be an integer in [0, 23]", field="time_of_day")
        return cls(
            season=season,
            time_of_day=time_of_day,
            weather=str(data["weather"]),
            location=str(data["location"]),
            worldview_text=str(data.get("worldview_text", "")),
        )


def format_hour(hour: int) -> str:
    """0 -> '12 AM', 7 -> '7 AM', 12 -> '12 PM', 19 -> '7 PM'."""
    suffix = "AM" if hour < 12 else "PM"
    twelve = hour % 12 or 12
    return f"{twelve} {suffix}"


def render_character_setting(npc: NpcProfile, world: WorldState, include_scene: bool = True) -> str:
    """Deterministic character-profile block for the ``character_setting`` slot.

    Field order is fixed; the Age/Gender lines are omitted entirely when the
    profile leaves them unset. Pure function of its inputs.
    """
    lines = [f"Role: {npc.role.display()}"]
    if npc.age is not None:
        lines.append(f"Age: {npc.age}")
    if npc.gender is not None:
        lines.append(f"Gender: {npc.gender}")
    lines.append(f"Persona: {npc.persona_text}")
    if include_scene:
        lines.append(f"Scene: {world.scene_display()}")
    return "\n".join(lines)


@dataclass(frozen=True)
class World:
    """A loaded world definition: NPC roster, knowledge base, and scenes."""

    npcs: tuple[NpcProfile, ...]
    knowledge: tuple[KnowledgeEntry, ...]
    worldview: str
    scenes: Mapping[str, WorldState] = field(default_factory=dict)

    def npc(self, npc_id: str) -> NpcProfile:
        for npc in self.npcs:
            if npc.id == npc_id:
                return npc
        raise KeyError(npc_id)

    def knowledge_entry(self, entry_id: str) -> KnowledgeEntry:
        for entry in self.knowledge:
            if entry.id == entry_id:
                return entry
        raise KeyError(entry_id)

    def npc_knowledge(self, npc: NpcProfile) -> tuple[KnowledgeEntry, ...]:
        """Entries referenced by the NPC, in id order."""
        refs = set(npc.knowledge_refs)
        return tuple(sorted((e for e in self.knowledge if e.id in refs), key=lambda e: e.id))

    def scene(self, name: str) -> WorldState:
        return self.scenes[name]


def load_world(path: str | Path) -> World:
    """Load and validate a world definition file."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"world file is not valid JSON: {exc}") from exc
    return world_from_dict(data)


def world_from_dict(data: Mapping[str, Any]) -> World:
    """Build a World from an already-parsed definition document."""
    version = data.get("schema_version")
    if version != WORLD_SCHEMA_VERSION:
        raise VersionError(f"unsupported world schema_version {version!r}")

    npcs = tuple(NpcProfile.from_dict(n) for n in data.get("npcs", ()))
    seen: set[str] = set()
    for npc in npcs:
        if npc.id in seen:
            raise SchemaError(f"duplicate npc id {npc.id!r}", field="npcs")
        seen.add(npc.id)

    knowledge = tuple(KnowledgeEntry.from_dict(k) for k in data.get("knowledge", ()))
    seen.clear()
    for entry in knowledge:
        if entry.id in seen:
            raise SchemaError(f"duplicate knowledge id {entry.id!r}", field="knowledge")
        seen.add(entry.id)

    worldview = str(data.get("worldview", ""))
    scenes = {
        str(name): replace(WorldState.from_dict(scene), worldview_text=worldview)
        for name, scene in data.get("scenes", {}).items()
    }
    return World(npcs=npcs, knowledge=knowledge, worldview=worldview, scenes=scenes)
