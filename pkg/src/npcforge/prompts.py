"""Composable prompt assembly for the two pipeline phases.

Prompts are built from plain-text template fragments shipped under
``templates/``.  Each strategy contributes, replaces, or removes named
sections; sections render in a fixed canonical order so composition is
insensitive to the order strategies are listed in a plan.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Mapping

from .errors import MissingSlot, PhaseMismatch, SchemaError
from .text import count_tokens

_BUILTIN_DIR = Path(__file__).parent / "templates"


class Phase(str, Enum):
    FUNCTION = "function"
    DIALOGUE = "dialogue"


class Track(str, Enum):
    API = "api"
    GPU = "gpu"

    @classmethod
    def parse(cls, text: str) -> "Track":
        key = text.strip().lower().replace("-track", "").replace("_track", "")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown track {text!r}; expected one of: api, gpu")


class StrategyId(str, Enum):
    """Prompting strategies, keyed by their short display labels."""

    ZERO_SHOT = "ZeroShot"
    DEFLANDERIZATION = "D"
    FEW_SHOT = "F"
    COT = "CoT"
    REMOVE_WORLD = "RW"
    GUIDE = "G"
    MOST_WORD = "MW"
    DEFINE_FUNCTION = "DefineFunction"

    @classmethod
    def parse(cls, text: str) -> "StrategyId":
        key = re.sub(r"[\s_-]+", "", text.strip().lower())
        found = _STRATEGY_ALIASES.get(key)
        if found is None:
            known = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown strategy {text!r}; expected one of: {known}")
        return found


_STRATEGY_ALIASES: dict[str, StrategyId] = {
    "zeroshot": StrategyId.ZERO_SHOT,
    "d": StrategyId.DEFLANDERIZATION,
    "deflanderization": StrategyId.DEFLANDERIZATION,
    "f": StrategyId.FEW_SHOT,
    "fewshot": StrategyId.FEW_SHOT,
    "cot": StrategyId.COT,
    "chainofthought": StrategyId.COT,
    "rw": StrategyId.REMOVE_WORLD,
    "removeworld": StrategyId.REMOVE_WORLD,
    "g": StrategyId.GUIDE,
    "guide": StrategyId.GUIDE,
    "mw": StrategyId.MOST_WORD,
    "mostword": StrategyId.MOST_WORD,
    "definefunction": StrategyId.DEFINE_FUNCTION,
}

# Substring each strategy is contractually required to add to composed text.
# REMOVE_WORLD is the inversion: its marker must VANISH when it is applied.
MARKERS: Mapping[StrategyId, str] = {
    StrategyId.DEFLANDERIZATION: "Avoid exaggerated roleplay or guessing",
    StrategyId.FEW_SHOT: "# Example Dialogue",
    StrategyId.COT: "**Reasoning:**",
    StrategyId.GUIDE: "Limit to 1–2 short, natural sentences",
    StrategyId.MOST_WORD: "Avoid These Overused Phrases",
    StrategyId.DEFINE_FUNCTION: "# Example Function Information",
}

WORLDVIEW_MARKER = "# Worldview"

_DIALOGUE_ONLY = frozenset(
    {StrategyId.GUIDE, StrategyId.MOST_WORD, StrategyId.REMOVE_WORLD}
)
_FUNCTION_ONLY = frozenset({StrategyId.COT, StrategyId.DEFINE_FUNCTION})

_DIALOGUE_ORDER = (
    "instruction",
    "profile",
    "knowledge",
    "style_guide",
    "word_guide",
    "examples",
    "similar",
    "worldview",
)
_FUNCTION_ORDER = (
    "instruction",
    "instruction_extra",
    "tools",
    "function_examples",
    "examples",
    "dialogue",
)

# Slots that may be legitimately absent; they render as empty text.
_OPTIONAL_SLOTS: Mapping[str, str] = {"dialogue_history": "", "similar_responses": ""}

_SLOT_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")
_SECTION_RE = re.compile(r"^\[([a-z][a-z0-9_]*)\]$")


@dataclass(frozen=True)
class PromptPlan:
    """What to say and how: a phase, a strategy set, and the filled slots."""

    phase: Phase
    strategies: tuple[StrategyId, ...] = ()
    slots: Mapping[str, str] = field(default_factory=dict)
    history: tuple[tuple[str, str], ...] = ()

    def with_slots(self, **extra: str) -> "PromptPlan":
        merged = dict(self.slots)
        merged.update(extra)
        return replace(self, slots=merged)

    def with_history(self, history: tuple[tuple[str, str], ...]) -> "PromptPlan":
        return replace(self, history=tuple(history))


@dataclass(frozen=True)
class RenderedPrompt:
    phase: Phase
    system_text: str
    messages: tuple[tuple[str, str], ...] = ()
    approx_tokens: int = 0

    def all_text(self) -> str:
        return "\n".join([self.system_text, *(text for _, text in self.messages)])


@lru_cache(maxsize=None)
def _read_template(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def _read_sections(path: str) -> Mapping[str, str]:
    """Parse a fragment file into its named sections.

    Sections open with a ``[name]`` line; everything until the next header
    belongs to the section. Text before the first header is rejected.
    """
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in _read_template(path).splitlines():
        match = _SECTION_RE.match(line.rstrip())
        if match:
            name = match.group(1)
            if name in sections:
                raise SchemaError(f"duplicate section [{name}] in {path}", field=name)
            current = sections.setdefault(name, [])
            continue
        if current is None:
            if line.strip():
                raise SchemaError(
                    f"template {path} has text before its first [section] header"
                )
            continue
        current.append(line)
    if not sections:
        raise SchemaError(f"template {path} declares no [section] headers")
    return {name: "\n".join(lines).strip("\n") for name, lines in sections.items()}


def _template_path(relpath: str, template_dir: str | Path | None) -> str:
    if template_dir is not None:
        override = Path(template_dir) / relpath
        if override.exists():
            return str(override)
    return str(_BUILTIN_DIR / relpath)


def _sections(
    relpath: str, template_dir: str | Path | None
) -> Mapping[str, str]:
    return _read_sections(_template_path(relpath, template_dir))


def _section(relpath: str, name: str, template_dir: str | Path | None) -> str:
    sections = _sections(relpath, template_dir)
    if name not in sections:
        raise SchemaError(
            f"template {relpath} is missing its [{name}] section", field=name
        )
    return sections[name]


def load_plain_template(relpath: str, template_dir: str | Path | None = None) -> str:
    """Read an unsectioned template file (data generation, refine)."""
    return _read_template(_template_path(relpath, template_dir))


def default_few_shot_block(
    phase: Phase, template_dir: str | Path | None = None
) -> str:
    relpath = f"{phase.value}/few_shot_block.txt"
    return load_plain_template(relpath, template_dir).strip("\n")


def fill_slots(template: str, slots: Mapping[str, str]) -> str:
    """Substitute ``{slot_name}`` markers; unknown names raise MissingSlot.

    Single pass: substituted values are inserted verbatim and never
    rescanned, so braces inside knowledge text cannot trigger expansion.
    """

    def _repl(match: re.Match[str]) -> str:
        name = match.group(1)
        if name in slots:
            return slots[name]
        if name in _OPTIONAL_SLOTS:
            return _OPTIONAL_SLOTS[name]
        raise MissingSlot(name)

    return _SLOT_RE.sub(_repl, template)


def check_plan(plan: PromptPlan) -> None:
    """Raise PhaseMismatch when the strategy set is illegal for the phase."""
    chosen = frozenset(plan.strategies)
    if StrategyId.ZERO_SHOT in chosen and len(chosen) > 1:
        raise PhaseMismatch("ZeroShot is a baseline and cannot be combined")
    misplaced = chosen & (
        _FUNCTION_ONLY if plan.phase is Phase.DIALOGUE else _DIALOGUE_ONLY
    )
    if misplaced:
        names = ", ".join(sorted(s.value for s in misplaced))
        raise PhaseMismatch(f"{names} not allowed in {plan.phase.value} phase")


def _dialogue_parts(
    chosen: frozenset[StrategyId],
    slots: Mapping[str, str],
    template_dir: str | Path | None,
) -> dict[str, str]:
    parts = {
        "instruction": _section("dialogue/zero_shot.txt", "instruction", template_dir),
        "profile": _section("dialogue/zero_shot.txt", "profile", template_dir),
        "knowledge": _section("dialogue/zero_shot.txt", "knowledge", template_dir),
        "worldview": _section("dialogue/zero_shot.txt", "worldview", template_dir),
    }
    if StrategyId.DEFLANDERIZATION in chosen:
        parts["instruction"] = _section(
            "dialogue/deflanderization.txt", "instruction", template_dir
        )
        parts["profile"] = _section(
            "dialogue/deflanderization.txt", "profile", template_dir
        )
    # MostWord's guide is a superset of Guide's; render only one of the two.
    if StrategyId.MOST_WORD in chosen:
        parts["word_guide"] = _section("dialogue/most_word.txt", "word_guide", template_dir)
    elif StrategyId.GUIDE in chosen:
        parts["style_guide"] = _section("dialogue/guide.txt", "style_guide", template_dir)
    if StrategyId.FEW_SHOT in chosen or slots.get("few_shot_block"):
        parts["examples"] = _section("dialogue/few_shot.txt", "examples", template_dir)
    if slots.get("similar_responses"):
        parts["similar"] = _section(
            "dialogue/similar_responses.txt", "similar", template_dir
        )
    if StrategyId.REMOVE_WORLD in chosen:
        del parts["worldview"]
    return parts


def _function_parts(
    chosen: frozenset[StrategyId],
    slots: Mapping[str, str],
    template_dir: str | Path | None,
) -> dict[str, str]:
    parts = {
        "instruction": _section("function/zero_shot.txt", "instruction", template_dir),
        "tools": _section("function/zero_shot.txt", "tools", template_dir),
        "dialogue": _section("function/zero_shot.txt", "dialogue", template_dir),
    }
    if StrategyId.COT in chosen:
        parts["instruction"] = _section("function/cot.txt", "instruction", template_dir)
    if StrategyId.DEFLANDERIZATION in chosen:
        parts["instruction_extra"] = _section(
            "function/deflanderization.txt", "instruction_extra", template_dir
        )
    if StrategyId.DEFINE_FUNCTION in chosen:
        parts["function_examples"] = _section(
            "function/define_function.txt", "function_examples", template_dir
        )
    if StrategyId.FEW_SHOT in chosen or slots.get("few_shot_block"):
        parts["examples"] = _section("function/few_shot.txt", "examples", template_dir)
    return parts


def compose(
    plan: PromptPlan, template_dir: str | Path | None = None
) -> RenderedPrompt:
    """Assemble the system prompt for a plan.

    Deterministic: same plan and templates give byte-identical output.
    Raises PhaseMismatch for an illegal strategy set and MissingSlot when a
    referenced slot is absent from the plan.
    """
    check_plan(plan)
    chosen = frozenset(plan.strategies)
    if StrategyId.FEW_SHOT in chosen and "few_shot_block" not in plan.slots:
        raise MissingSlot("few_shot_block")
    if plan.phase is Phase.DIALOGUE:
        order, parts = _DIALOGUE_ORDER, _dialogue_parts(chosen, plan.slots, template_dir)
    else:
        order, parts = _FUNCTION_ORDER, _function_parts(chosen, plan.slots, template_dir)
    body = "\n\n".join(parts[name] for name in order if name in parts)
    system_text = fill_slots(body, plan.slots)
    messages = tuple((speaker, text) for speaker, text in plan.history)
    approx = count_tokens(system_text) + sum(count_tokens(t) for _, t in messages)
    return RenderedPrompt(
        phase=plan.phase,
        system_text=system_text,
        messages=messages,
        approx_tokens=approx,
    )


def default_plan(
    track: Track,
    phase: Phase,
    slots: Mapping[str, str] | None = None,
    template_dir: str | Path | None = None,
) -> PromptPlan:
    """The strategy set each track starts from.

    The api track pairs trimmed-down roleplay with worldview removal and the
    two-turn sample dialogue; the gpu track leaves prompting to the tuned
    model and starts from the bare baseline.
    """
    filled = dict(slots or {})
    if track is Track.API:
        if phase is Phase.DIALOGUE:
            strategies: tuple[StrategyId, ...] = (
                StrategyId.DEFLANDERIZATION,
                StrategyId.REMOVE_WORLD,
                StrategyId.FEW_SHOT,
            )
        else:
            strategies = (StrategyId.FEW_SHOT, StrategyId.DEFINE_FUNCTION)
        filled.setdefault("few_shot_block", default_few_shot_block(phase, template_dir))
    else:
        strategies = ()
    return PromptPlan(phase=phase, strategies=strategies, slots=filled)
