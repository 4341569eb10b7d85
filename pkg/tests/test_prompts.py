import pytest

from npcforge.errors import MissingSlot, PhaseMismatch, SchemaError
from npcforge.prompts import (
    MARKERS,
    WORLDVIEW_MARKER,
    Phase,
    PromptPlan,
    StrategyId,
    Track,
    compose,
    default_few_shot_block,
    default_plan,
    fill_slots,
)

D = StrategyId.DEFLANDERIZATION
F = StrategyId.FEW_SHOT
RW = StrategyId.REMOVE_WORLD
G = StrategyId.GUIDE
MW = StrategyId.MOST_WORD
COT = StrategyId.COT
DEFINE = StrategyId.DEFINE_FUNCTION

DIALOGUE_SLOTS = {
    "character_setting": "Role: Merchant\nPersona: Keeps a tidy shop.",
    "function_knowledge": "- Man Gauche: sells for 120 gold",
    "general_knowledge": "- Buckler: a small shield",
    "worldview": "Bramblewick sits on the old trade road.",
}
FUNCTION_SLOTS = {
    "formatted_tools": "check_price(item_name: string)",
    "dialogue_history": "Player: how much is the buckler?",
}


def dialogue_plan(*strategies: StrategyId, **extra: str) -> PromptPlan:
    slots = dict(DIALOGUE_SLOTS, **extra)
    if F in strategies and "few_shot_block" not in slots:
        slots["few_shot_block"] = default_few_shot_block(Phase.DIALOGUE)
    return PromptPlan(phase=Phase.DIALOGUE, strategies=tuple(strategies), slots=slots)


def function_plan(*strategies: StrategyId, **extra: str) -> PromptPlan:
    slots = dict(FUNCTION_SLOTS, **extra)
    if F in strategies and "few_shot_block" not in slots:
        slots["few_shot_block"] = default_few_shot_block(Phase.FUNCTION)
    return PromptPlan(phase=Phase.FUNCTION, strategies=tuple(strategies), slots=slots)


# Strategy power-set sample: broad enough to exercise every marker both
# present and absent, small enough to read. MW never appears without G
# because its fragment embeds the style-guide bullets.
PLAN_SAMPLE = [
    dialogue_plan(),
    dialogue_plan(D),
    dialogue_plan(RW),
    dialogue_plan(F),
    dialogue_plan(G),
    dialogue_plan(G, MW),
    dialogue_plan(D, RW, F),
    function_plan(COT, DEFINE),
]

CONTRACT_STRATEGIES = (D, RW, F, COT, G, MW, DEFINE)


def test_marker_contract_over_plan_sample():
    """56 presence/absence checks: each marker appears iff its strategy is on."""
    checked = 0
    for plan in PLAN_SAMPLE:
        text = compose(plan).system_text
        for strategy in CONTRACT_STRATEGIES:
            if strategy is RW:
                expected = plan.phase is Phase.DIALOGUE and RW not in plan.strategies
                present = WORLDVIEW_MARKER in text
            else:
                expected = strategy in plan.strategies
                present = MARKERS[strategy] in text
            assert present == expected, (plan.strategies, strategy)
            checked += 1
    assert checked == 56


def test_d_rw_plan_suppresses_worldview_and_softens_roleplay():
    text = compose(dialogue_plan(D, RW)).system_text
    assert "Avoid exaggerated roleplay or guessing" in text
    assert WORLDVIEW_MARKER not in text
    assert DIALOGUE_SLOTS["worldview"] not in text


def test_strategy_changes_stay_inside_their_section():
    base = compose(dialogue_plan()).system_text
    with_guide = compose(dialogue_plan(G)).system_text
    # removing the style-guide block must give back the baseline exactly
    start = with_guide.index("# Response Style Guide")
    end = with_guide.index("# Worldview")
    assert with_guide[:start] + with_guide[end:] == base


def test_few_shot_appends_example_block():
    base = compose(dialogue_plan()).system_text
    shot = compose(dialogue_plan(F)).system_text
    assert shot != base
    assert "# Example Dialogue" in shot
    assert "Player:" in shot


def test_compose_is_deterministic():
    plan = dialogue_plan(D, RW, F)
    assert compose(plan).system_text == compose(plan).system_text


def test_section_order_is_fixed():
    text = compose(dialogue_plan(G, MW, F, similar_responses="- 'Aye.'")).system_text
    anchors = [
        text.index(DIALOGUE_SLOTS["character_setting"].splitlines()[0]),
        text.index("# Knowledge"),
        text.index("# Response Style Guide"),
        text.index("# Example Dialogue"),
        text.index("# Similar Past Responses"),
        text.index("# Worldview"),
    ]
    assert anchors == sorted(anchors)


def test_similar_responses_section_appears_only_when_filled():
    plain = compose(dialogue_plan()).system_text
    assert "# Similar Past Responses" not in plain
    seeded = compose(dialogue_plan(similar_responses="- 'Aye, 120 gold.'")).system_text
    assert "# Similar Past Responses" in seeded
    assert "Aye, 120 gold." in seeded


def test_function_phase_markers():
    text = compose(function_plan(COT, DEFINE)).system_text
    assert "**Reasoning:**" in text
    assert "# Example Function Information" in text
    assert FUNCTION_SLOTS["formatted_tools"] in text


def test_function_deflanderization_adds_instruction_extra():
    base = compose(function_plan()).system_text
    with_d = compose(function_plan(D)).system_text
    assert "Avoid exaggerated roleplay or guessing" not in base
    assert "Avoid exaggerated roleplay or guessing" in with_d


# -- slot filling ------------------------------------------------------------


def test_fill_slots_single_pass():
    out = fill_slots("{a} and {b}", {"a": "{b}", "b": "x"})
    assert out == "{b} and x"


def test_fill_slots_ignores_json_braces():
    template = 'Reply as [{"name": "f", "parameters": {}}] with {slot}.'
    out = fill_slots(template, {"slot": "care"})
    assert out == 'Reply as [{"name": "f", "parameters": {}}] with care.'


def test_fill_slots_missing_raises():
    with pytest.raises(MissingSlot):
        fill_slots("hello {who}", {})


def test_optional_slots_default_empty():
    text = compose(function_plan()).system_text
    assert "{dialogue_history}" not in text


def test_few_shot_without_block_raises():
    plan = PromptPlan(phase=Phase.DIALOGUE, strategies=(F,), slots=dict(DIALOGUE_SLOTS))
    with pytest.raises(MissingSlot):
        compose(plan)


# -- plan legality -----------------------------------------------------------


def test_zero_shot_cannot_combine():
    plan = PromptPlan(
        phase=Phase.DIALOGUE,
        strategies=(StrategyId.ZERO_SHOT, D),
        slots=dict(DIALOGUE_SLOTS),
    )
    with pytest.raises(PhaseMismatch):
        compose(plan)


@pytest.mark.parametrize("strategy", [G, MW, RW])
def test_dialogue_only_strategies_rejected_in_function_phase(strategy):
    plan = PromptPlan(phase=Phase.FUNCTION, strategies=(strategy,), slots=dict(FUNCTION_SLOTS))
    with pytest.raises(PhaseMismatch):
        compose(plan)


@pytest.mark.parametrize("strategy", [COT, DEFINE])
def test_function_only_strategies_rejected_in_dialogue_phase(strategy):
    plan = PromptPlan(phase=Phase.DIALOGUE, strategies=(strategy,), slots=dict(DIALOGUE_SLOTS))
    with pytest.raises(PhaseMismatch):
        compose(plan)


# -- defaults and parsing ----------------------------------------------------


def test_default_plans_per_track():
    assert default_plan(Track.API, Phase.DIALOGUE).strategies == (D, RW, F)
    assert default_plan(Track.API, Phase.FUNCTION).strategies == (F, DEFINE)
    assert default_plan(Track.GPU, Phase.DIALOGUE).strategies == ()
    assert default_plan(Track.GPU, Phase.FUNCTION).strategies == ()


def test_strategy_parse_aliases():
    assert StrategyId.parse("d") is D
    assert StrategyId.parse("Deflanderization") is D
    assert StrategyId.parse("few_shot") is F
    assert StrategyId.parse("chain-of-thought") is COT
    assert StrategyId.parse("REMOVE WORLD") is RW
    with pytest.raises(ValueError):
        StrategyId.parse("turbo")


def test_track_parse():
    assert Track.parse("api") is Track.API
    assert Track.parse("GPU-track") is Track.GPU
    with pytest.raises(ValueError):
        Track.parse("tpu")


def test_approx_tokens_counts_system_and_history():
    plan = dialogue_plan().with_history((("player", "two words"),))
    rendered = compose(plan)
    bare = compose(dialogue_plan())
    assert rendered.approx_tokens == bare.approx_tokens + 2


def test_template_override_dir(tmp_path):
    override = tmp_path / "dialogue"
    override.mkdir()
    (override / "zero_shot.txt").write_text(
        "[instruction]\nSpeak only in rhyme.\n"
        "[profile]\n{character_setting}\n"
        "[knowledge]\n{function_knowledge}\n{general_knowledge}\n"
        "[worldview]\n# Worldview\n{worldview}\n",
        encoding="utf-8",
    )
    text = compose(dialogue_plan(), template_dir=tmp_path).system_text
    assert "Speak only in rhyme." in text
    # strategy fragments still come from the packaged set
    assert "Avoid exaggerated roleplay" in compose(
        dialogue_plan(D), template_dir=tmp_path
    ).system_text


def test_partial_override_file_is_rejected(tmp_path):
    override = tmp_path / "dialogue"
    override.mkdir()
    (override / "zero_shot.txt").write_text(
        "[instruction]\nSpeak only in rhyme.\n", encoding="utf-8"
    )
    with pytest.raises(SchemaError):
        compose(dialogue_plan(), template_dir=tmp_path)


def test_bad_template_sections_rejected(tmp_path):
    bad_dir = tmp_path / "dialogue"
    bad_dir.mkdir()
    (bad_dir / "zero_shot.txt").write_text(
        "[instruction]\na\n[instruction]\nb\n", encoding="utf-8"
    )
    with pytest.raises(SchemaError):
        compose(dialogue_plan(), template_dir=tmp_path)
