"""Dialogue sessions: immutable turn lists with strict speaker alternation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping

from .errors import OutOfOrderTurn, SchemaError, SpeakerViolation
from .tools import ToolCall, ToolResult
from .world import NpcProfile, WorldState


class Speaker(str, Enum):
    PLAYER = "player"
    NPC = "npc"


@dataclass(frozen=True)
class DialogueTurn:
    speaker: Speaker
    text: str
    tool_calls: tuple[ToolCall, ...] = ()
    tool_results: tuple[ToolResult, ...] = ()
    timestamp: int = 0

    def __post_init__(self):
        if self.speaker is Speaker.PLAYER and (self.tool_calls or self.tool_results):
            raise ValueError("player turns carry no tool calls or results")

    def to_dict(self) -> dict[str, Any]:
        return {
            "speaker": self.speaker.value,
            "text": self.text,
            "tool_calls": [c.to_dict() for c in self.tool_calls],
            "tool_results": [r.to_dict() for r in self.tool_results],
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DialogueTurn":
        if "speaker" not in data or "text" not in data:
            raise SchemaError("turn missing 'speaker' or 'text'", field="speaker")
        return cls(
            speaker=Speaker(data["speaker"]),
            text=str(data["text"]),
            tool_calls=tuple(ToolCall.from_dict(c) for c in data.get("tool_calls", ())),
            tool_results=tuple(ToolResult.from_dict(r) for r in data.get("tool_results", ())),
            timestamp=int(data.get("timestamp", 0)),
        )


@dataclass(frozen=True)
class Session:
    """One player/NPC conversation. Value object: appending returns a new session."""

    id: str
    npc: NpcProfile
    world: WorldState
    turns: tuple[DialogueTurn, ...] = ()
    strategy_set: tuple[str, ...] = ()
    budget_profile: str = "api"

    def last_timestamp(self) -> int:
        return self.turns[-1].timestamp if self.turns else -1

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "npc": self.npc.to_dict(),
            "world": self.world.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
            "strategy_set": list(self.strategy_set),
            "budget_profile": self.budget_profile,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Session":
        for key in ("id", "npc", "world"):
            if key not in data:
                raise SchemaError(f"session missing field {key!r}", field=key)
        session = cls(
            id=str(data["id"]),
            npc=NpcProfile.from_dict(data["npc"]),
            world=WorldState.from_dict(data["world"]),
            strategy_set=tuple(str(s) for s in data.get("strategy_set", ())),
            budget_profile=str(data.get("budget_profile", "api")),
        )
        for turn in data.get("turns", ()):
            session = append_turn(session, DialogueTurn.from_dict(turn))
        return session


def append_turn(session: Session, turn: DialogueTurn) -> Session:
    """Append one turn, enforcing timestamps and Player/Npc alternation.

    Sessions start with a Player turn; timestamps increase by exactly 1.
    """
    expected_ts = session.last_timestamp() + 1
    if turn.timestamp != expected_ts:
        raise OutOfOrderTurn(f"expected timestamp {expected_ts}, got {turn.timestamp}")
    expected_speaker = Speaker.PLAYER if not session.turns else (
        Speaker.NPC if session.turns[-1].speaker is Speaker.PLAYER else Speaker.PLAYER
    )
    if turn.speaker is not expected_speaker:
        raise SpeakerViolation(
            f"expected {expected_speaker.value} turn at timestamp {turn.timestamp}, "
            f"got {turn.speaker.value}"
        )
    return replace(session, turns=session.turns + (turn,))
