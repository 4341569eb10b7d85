import pytest

from npcforge.errors import OutOfOrderTurn, SpeakerViolation
from npcforge.session import DialogueTurn, Session, Speaker, append_turn
from npcforge.tools import ToolCall


@pytest.fixture
def empty_session(demo_world):
    return Session(
        id="t1",
        npc=demo_world.npc("elda"),
        world=demo_world.scene("weapon_shop_evening"),
        strategy_set=("D", "RW", "F"),
        budget_profile="api",
    )


def test_sessions_start_with_player(empty_session):
    npc_first = DialogueTurn(speaker=Speaker.NPC, text="Welcome!", timestamp=0)
    with pytest.raises(SpeakerViolation):
        append_turn(empty_session, npc_first)


def test_alternation_enforced(empty_session):
    s = append_turn(empty_session, DialogueTurn(Speaker.PLAYER, "hi", timestamp=0))
    with pytest.raises(SpeakerViolation):
        append_turn(s, DialogueTurn(Speaker.PLAYER, "hello again", timestamp=1))
    s = append_turn(s, DialogueTurn(Speaker.NPC, "welcome", timestamp=1))
    assert [t.speaker for t in s.turns] == [Speaker.PLAYER, Speaker.NPC]


def test_timestamps_must_increment(empty_session):
    with pytest.raises(OutOfOrderTurn):
        append_turn(empty_session, DialogueTurn(Speaker.PLAYER, "hi", timestamp=5))
    s = append_turn(empty_session, DialogueTurn(Speaker.PLAYER, "hi", timestamp=0))
    with pytest.raises(OutOfOrderTurn):
        append_turn(s, DialogueTurn(Speaker.NPC, "yo", timestamp=0))


def test_append_is_pure(empty_session):
    s2 = append_turn(empty_session, DialogueTurn(Speaker.PLAYER, "hi", timestamp=0))
    assert len(empty_session.turns) == 0
    assert len(s2.turns) == 1


def test_last_timestamp_empty(empty_session):
    assert empty_session.last_timestamp() == -1


def test_player_turns_cannot_carry_tools():
    with pytest.raises(ValueError):
        DialogueTurn(Speaker.PLAYER, "hi", tool_calls=(ToolCall("f", {}),))


def test_npc_turn_carries_tools(empty_session):
    s = append_turn(empty_session, DialogueTurn(Speaker.PLAYER, "price?", timestamp=0))
    npc_turn = DialogueTurn(
        Speaker.NPC,
        "120 gold.",
        tool_calls=(ToolCall("check_price", {"item_name": "Man Gauche"}),),
        timestamp=1,
    )
    s = append_turn(s, npc_turn)
    assert s.turns[-1].tool_calls[0].name == "check_price"


def test_session_round_trip(empty_session):
    s = append_turn(empty_session, DialogueTurn(Speaker.PLAYER, "hi", timestamp=0))
    s = append_turn(s, DialogueTurn(Speaker.NPC, "hello there", timestamp=1))
    restored = Session.from_dict(s.to_dict())
    assert restored == s


def test_round_trip_rejects_corrupted_order(empty_session):
    s = append_turn(empty_session, DialogueTurn(Speaker.PLAYER, "hi", timestamp=0))
    doc = s.to_dict()
    doc["turns"][0]["timestamp"] = 3
    with pytest.raises(OutOfOrderTurn):
        Session.from_dict(doc)
