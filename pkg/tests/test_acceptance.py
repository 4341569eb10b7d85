"""End-to-end checks for the package's load-bearing guarantees.

Each test covers one guarantee and prints exactly one PASS/FAIL line on
the real terminal, so a scan of the output shows where the build stands
without reading tracebacks.
"""

import dataclasses
import json
import math
import random
import time
from contextlib import contextmanager

import pytest

from npcforge import data_path
from npcforge.errors import BudgetExceeded, Timeout, TurnFailed
from npcforge.gateway import (
    API_TRACK_PROFILE,
    GPU_TRACK_PROFILE,
    CallLedger,
    MockBackend,
    MockScriptEntry,
)
from npcforge.memory import (
    EmbeddingVector,
    HashEmbeddingProvider,
    RetrievalIndex,
    RetrievalRecord,
    embed,
    refine,
    retrieve,
    within_refine_band,
)
from npcforge.metrics import (
    FunctionCallRecord,
    TokenEmbeddingSequence,
    TokenSequence,
    acc_args,
    acc_name,
    aggregate,
    bleu4,
    embed_f1,
    tokenize,
    word_f1,
)
from npcforge.pipeline import (
    TURN_STEPS,
    EventLog,
    config_for_track,
    replay,
    replay_matches_golden,
    run_turn,
    split_strategies,
)
from npcforge.prompts import (
    MARKERS,
    WORLDVIEW_MARKER,
    Phase,
    PromptPlan,
    StrategyId,
    Track,
    compose,
    default_few_shot_block,
)
from npcforge.runner import RunConfig, run_eval
from npcforge.session import Session
from npcforge.tools import ToolCall

from .oracles import (
    acc_args_oracle,
    acc_name_oracle,
    retrieve_oracle,
    word_f1_oracle,
)


@contextmanager
def verdict(capsys, name):
    """Print one PASS/FAIL line per guarantee, straight to the terminal."""
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"FAIL {name}")
        raise
    with capsys.disabled():
        print(f"PASS {name}")


VOCAB = (
    "the a an buckler longsword dagger gold coin quest road mine herb guild "
    "shop evening winter rain clear friend traveler blade shield price stock "
    "aye well fine good day coin purse steel iron wood leather strap guard"
).split()


def random_words(rng, low, high):
    return " ".join(rng.choices(VOCAB, k=rng.randint(low, high)))


def random_call_list(rng, max_calls=3):
    names = ["check_price", "check_description", "list_inventory", "sell_item"]
    calls = []
    for _ in range(rng.randint(0, max_calls)):
        name = rng.choice(names)
        args = {}
        if name in ("check_price", "check_description", "sell_item"):
            args["item_name"] = rng.choice(["Buckler", "Longsword", "Man Gauche"])
        if name == "sell_item" and rng.random() < 0.5:
            args["quantity"] = rng.randint(1, 4)
        calls.append(ToolCall(name, args))
    return calls


# -- 1: scoring agrees with independent brute-force references ------------------


def test_metric_oracle_equivalence(capsys):
    with verdict(capsys, "metric-oracle-equivalence"):
        started = time.monotonic()
        rng = random.Random(20260817)

        preds, golds = [], []
        for _ in range(1000):
            gold = random_call_list(rng)
            pred = list(gold) if rng.random() < 0.5 else random_call_list(rng)
            rng.shuffle(pred)
            preds.append(pred)
            golds.append(gold)
        pred_records = [FunctionCallRecord.from_calls(c) for c in preds]
        gold_records = [FunctionCallRecord.from_calls(c) for c in golds]
        assert abs(acc_name(pred_records, gold_records) - acc_name_oracle(preds, golds)) <= 1e-9
        assert abs(acc_args(pred_records, gold_records) - acc_args_oracle(preds, golds)) <= 1e-9

        for _ in range(1000):
            pred = tuple(rng.choices(VOCAB, k=rng.randint(0, 14)))
            ref = tuple(rng.choices(VOCAB, k=rng.randint(0, 14)))
            got = word_f1(TokenSequence(pred), TokenSequence(ref))
            assert abs(got - word_f1_oracle(pred, ref)) <= 1e-9

        dim = 8
        for _ in range(1000):
            n_records = rng.randint(1, 8)
            records = tuple(
                RetrievalRecord(
                    id=f"r{i}",
                    player_text="p",
                    npc_text="n",
                    embedding=EmbeddingVector(
                        tuple(rng.gauss(0, 1) for _ in range(dim))
                    ),
                )
                for i in range(n_records)
            )
            index = RetrievalIndex(records=records, provider_id="random", dim=dim)
            query = EmbeddingVector(tuple(rng.gauss(0, 1) for _ in range(dim)))
            k = rng.randint(1, 5)
            min_sim = rng.choice([-1.0, 0.0, 0.2, 0.5, 0.9])
            got = retrieve(index, query, k, min_sim)
            want = retrieve_oracle(records, query.values, k, min_sim)
            assert [r.id for r, _ in got] == [rid for rid, _ in want]
            for (_, sim_got), (_, sim_want) in zip(got, want):
                assert abs(sim_got - sim_want) <= 1e-9

        assert time.monotonic() - started < 10.0


# -- 2: BLEU-4 reference points -------------------------------------------------


def test_bleu4_reference_points(capsys):
    with verdict(capsys, "bleu4-reference-points"):
        rng = random.Random(7)
        for _ in range(100):
            seq = TokenSequence(tuple(rng.choices(VOCAB, k=rng.randint(4, 20))))
            assert bleu4(seq, seq).score == pytest.approx(1.0, abs=1e-12)
        hand = bleu4(tokenize("a b c d"), tokenize("a b c d e"))
        assert hand.score == pytest.approx(0.77880, abs=1e-4)
        assert bleu4(tokenize("w x y z"), tokenize("a b c d")).score == 0.0
        assert bleu4(tokenize("a b c"), tokenize("a b c")).score == 0.0


# -- 3: embedding F1 on a hand-checkable similarity matrix -----------------------


def test_embedding_f1_hand_matrix(capsys):
    with verdict(capsys, "embedding-f1-hand-matrix"):
        e1 = EmbeddingVector((1.0, 0.0))
        e2 = EmbeddingVector((0.0, 1.0))
        pred = TokenEmbeddingSequence(tokens=("x",), embeddings=(e1,))
        ref = TokenEmbeddingSequence(tokens=("x", "y"), embeddings=(e1, e2))
        precision, recall, f1 = embed_f1(pred, ref)
        assert abs(precision - 1.0) <= 1e-9
        assert abs(recall - 0.5) <= 1e-9
        assert abs(f1 - 2 / 3) <= 1e-9

        same = TokenEmbeddingSequence(tokens=("a", "b"), embeddings=(e1, e2))
        _, _, identity = embed_f1(same, same)
        assert abs(identity - 1.0) <= 1e-9
        flipped = TokenEmbeddingSequence(tokens=("c", "d"), embeddings=(e2, e1))
        _, _, still_one = embed_f1(same, flipped)
        assert abs(still_one - 1.0) <= 1e-9  # order-free greedy matching
        other = TokenEmbeddingSequence(tokens=("c",), embeddings=(EmbeddingVector((1.0, 0.0)),))
        orthogonal = TokenEmbeddingSequence(tokens=("d",), embeddings=(EmbeddingVector((0.0, 1.0)),))
        _, _, zero = embed_f1(other, orthogonal)
        assert zero == 0.0


# -- 4: aggregate arithmetic ------------------------------------------------------


def test_aggregate_arithmetic(capsys):
    with verdict(capsys, "aggregate-arithmetic"):
        a = aggregate(
            {"acc_name": 0.587, "acc_args": 0.587},
            {"embed_f1": 0.615, "bleu4": 0.615, "word_f1": 0.615},
        )
        assert a.aggregate == 0.601
        b = aggregate(
            {"acc_name": 0.422, "acc_args": 0.422},
            {"embed_f1": 0.598, "bleu4": 0.598, "word_f1": 0.598},
        )
        assert b.aggregate == 0.510


# -- 5: budget enforcement over randomized runs -----------------------------------


def test_budget_enforcement(capsys, demo_world, merchant_registry):
    with verdict(capsys, "budget-enforcement"):
        rng = random.Random(99)
        provider = HashEmbeddingProvider(dim=16)
        records = tuple(
            RetrievalRecord(
                id=f"m{i}",
                player_text=random_words(rng, 3, 8),
                npc_text=random_words(rng, 4, 12),
                embedding=embed(provider, random_words(rng, 3, 8)),
            )
            for i in range(20)
        )
        index = RetrievalIndex(records=records, provider_id=provider.provider_id, dim=16)
        base = config_for_track(Track.API, demo_world, merchant_registry, MockBackend([]))
        strategy_pool = ["D", "RW", "F", "G", "MW", "CoT", "DefineFunction"]

        def function_response(r):
            roll = r.random()
            if roll < 0.4:
                return json.dumps([c.to_dict() for c in random_call_list(r)])
            if roll < 0.6:
                return "[]"
            if roll < 0.8:
                return random_words(r, 3, 30)
            return "```json\n{broken\n```"

        session = Session(
            id="budget",
            npc=demo_world.npc("elda"),
            world=demo_world.scene("weapon_shop_evening"),
        )
        limit = API_TRACK_PROFILE.max_input_tokens
        successes = 0
        rejected = 0
        for i in range(10_000):
            picked = rng.sample(strategy_pool, k=rng.randint(0, 4))
            function_set, dialogue_set = split_strategies(picked)
            roll = rng.random()
            if roll < 0.02:
                words = rng.randint(2100, 2600)  # neither phase can absorb this
            elif roll < 0.07:
                words = rng.randint(300, 900)
            else:
                words = rng.randint(1, 80)
            config = dataclasses.replace(
                base,
                backend=MockBackend([function_response(rng), random_words(rng, 1, 60)]),
                function_strategies=function_set,
                dialogue_strategies=dialogue_set,
                index=index if rng.random() < 0.25 else None,
                provider=provider,
            )
            player_text = random_words(rng, words, words)
            try:
                session, outcome = run_turn(session, player_text, config)
            except TurnFailed as exc:
                assert isinstance(exc.cause, BudgetExceeded)
                assert exc.cause.kind == "input_tokens"
                assert exc.outcome.ledger.calls_made <= 2
                rejected += 1
                continue
            successes += 1
            assert outcome.ledger.calls_made <= 2
            assert outcome.function_prompt.approx_tokens <= limit
            assert outcome.dialogue_prompt.approx_tokens <= limit
            if len(session.turns) > 40:
                session = dataclasses.replace(session, turns=())
        assert successes + rejected == 10_000
        assert rejected > 0  # the oversized runs actually exercised the gate

        # a stalled backend must abort the turn at the deadline
        stalled = dataclasses.replace(
            base, backend=MockBackend([MockScriptEntry(text="[]", delay_ms=9000)])
        )
        fresh = Session(
            id="stall",
            npc=demo_world.npc("elda"),
            world=demo_world.scene("weapon_shop_evening"),
        )
        started = time.monotonic()
        with pytest.raises(TurnFailed) as err:
            run_turn(fresh, "Hello?", stalled)
        elapsed_ms = (time.monotonic() - started) * 1000.0
        assert isinstance(err.value.cause, Timeout)
        assert abs(elapsed_ms - API_TRACK_PROFILE.turn_timeout_ms) <= 200.0


# -- 6: strategy composition contract ---------------------------------------------


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


def _plan(phase, strategies, slots):
    slots = dict(slots)
    if StrategyId.FEW_SHOT in strategies and "few_shot_block" not in slots:
        slots["few_shot_block"] = default_few_shot_block(phase)
    return PromptPlan(phase=phase, strategies=tuple(strategies), slots=slots)


def test_strategy_marker_contract(capsys):
    with verdict(capsys, "strategy-marker-contract"):
        D = StrategyId.DEFLANDERIZATION
        F = StrategyId.FEW_SHOT
        RW = StrategyId.REMOVE_WORLD
        G = StrategyId.GUIDE
        MW = StrategyId.MOST_WORD
        COT = StrategyId.COT
        DEFINE = StrategyId.DEFINE_FUNCTION

        sample = [
            _plan(Phase.DIALOGUE, (), DIALOGUE_SLOTS),
            _plan(Phase.DIALOGUE, (D,), DIALOGUE_SLOTS),
            _plan(Phase.DIALOGUE, (RW,), DIALOGUE_SLOTS),
            _plan(Phase.DIALOGUE, (F,), DIALOGUE_SLOTS),
            _plan(Phase.DIALOGUE, (G,), DIALOGUE_SLOTS),
            _plan(Phase.DIALOGUE, (G, MW), DIALOGUE_SLOTS),
            _plan(Phase.DIALOGUE, (D, RW, F), DIALOGUE_SLOTS),
            _plan(Phase.FUNCTION, (COT, DEFINE), FUNCTION_SLOTS),
        ]
        contract = (D, RW, F, COT, G, MW, DEFINE)
        checked = 0
        for plan in sample:
            text = compose(plan).system_text
            for strategy in contract:
                if strategy is RW:
                    expected = plan.phase is Phase.DIALOGUE and RW not in plan.strategies
                    present = WORLDVIEW_MARKER in text
                else:
                    expected = strategy in plan.strategies
                    present = MARKERS[strategy] in text
                assert present == expected, (plan.strategies, strategy)
                checked += 1
        assert checked == 56

        restrained = compose(_plan(Phase.DIALOGUE, (D, RW), DIALOGUE_SLOTS)).system_text
        assert "Avoid exaggerated roleplay or guessing" in restrained
        assert "Bramblewick sits on the old trade road." not in restrained
        assert WORLDVIEW_MARKER not in restrained


# -- 7: deterministic replay -------------------------------------------------------


def test_deterministic_replay(capsys):
    with verdict(capsys, "deterministic-replay"):
        ok, message = replay_matches_golden(
            data_path("recording_demo.json"),
            data_path("golden_demo_transcript.json"),
        )
        assert ok, message
        assert message == "transcripts identical"

        log = EventLog()
        outcomes = replay(data_path("recording_demo.json"), event_log=log)
        steps = log.steps_for("demo-shop")
        assert len(steps) == len(TURN_STEPS) * len(outcomes)
        for turn_index in range(len(outcomes)):
            chunk = steps[turn_index * len(TURN_STEPS) : (turn_index + 1) * len(TURN_STEPS)]
            assert chunk == list(TURN_STEPS)


# -- 8: the eval loop scores a faithful backend perfectly ---------------------------


def test_eval_self_consistency(capsys):
    with verdict(capsys, "eval-self-consistency"):
        gold = run_eval(RunConfig(backend="mock-gold", workers=1))
        for name in ("acc_name", "acc_args", "word_f1", "embed_f1", "bleu4"):
            assert gold.corpus[name] == 1.0, name
        assert gold.aggregate == 1.0

        empty = run_eval(RunConfig(backend="mock-empty", workers=1))
        assert empty.corpus["acc_name"] == 0.0
        assert empty.corpus["acc_args"] == 0.0
        assert empty.corpus["word_f1"] == 0.0
        assert empty.corpus["embed_f1"] == 0.0


# -- 9: rewrite gating respects budget and the length band --------------------------


def test_refine_gating(capsys, demo_world, merchant_registry):
    with verdict(capsys, "refine-gating"):
        rng = random.Random(424242)
        provider = HashEmbeddingProvider(dim=16)

        # capped track: the rewrite call must never be issued
        for _ in range(100):
            query = random_words(rng, 3, 8)
            record = RetrievalRecord(
                id="hit",
                player_text=query,
                npc_text=random_words(rng, 4, 12),
                embedding=embed(provider, query),
            )
            index = RetrievalIndex(
                records=(record,), provider_id=provider.provider_id, dim=16
            )
            backend = MockBackend(["[]", random_words(rng, 2, 12), "never sent"])
            config = config_for_track(
                Track.API,
                demo_world,
                merchant_registry,
                backend,
                index=index,
                provider=provider,
                refine_enabled=True,
            )
            session = Session(
                id="cap",
                npc=demo_world.npc("elda"),
                world=demo_world.scene("weapon_shop_evening"),
            )
            _, outcome = run_turn(session, query, config)
            assert outcome.ledger.calls_made == 2
            assert outcome.refined is False
            assert backend.remaining() == 1

        # open track: an applied rewrite always lands inside the length band
        applied = 0
        for _ in range(400):
            draft = random_words(rng, 4, 14)
            target = random_words(rng, 4, 20)
            target_count = len(target.split())
            rewrite = random_words(rng, 1, int(target_count * 1.8) + 1)
            similarity = rng.uniform(0.3, 1.0)
            record = RetrievalRecord(
                id="hit",
                player_text="q",
                npc_text=target,
                embedding=EmbeddingVector((1.0,) + (0.0,) * 15),
            )
            ledger = CallLedger(utterance_id="refine", calls_made=2)
            result = refine(
                draft,
                (record, similarity),
                MockBackend([rewrite]),
                ledger,
                GPU_TRACK_PROFILE,
                threshold=0.8,
            )
            if similarity < 0.8:
                assert result == draft
                assert ledger.calls_made == 2
                continue
            in_band = within_refine_band(len(rewrite.split()), target_count)
            if in_band and rewrite != draft:
                assert result == rewrite
                applied += 1
                assert within_refine_band(len(result.split()), target_count)
            else:
                assert result == draft
        assert applied > 0

        # the same holds through the full pipeline on the open track
        for _ in range(50):
            query = random_words(rng, 3, 8)
            target = random_words(rng, 5, 15)
            rewrite = random_words(rng, 1, 25)
            record = RetrievalRecord(
                id="hit",
                player_text=query,
                npc_text=target,
                embedding=embed(provider, query),
            )
            index = RetrievalIndex(
                records=(record,), provider_id=provider.provider_id, dim=16
            )
            backend = MockBackend(["[]", random_words(rng, 3, 10), rewrite])
            config = config_for_track(
                Track.GPU,
                demo_world,
                merchant_registry,
                backend,
                index=index,
                provider=provider,
                refine_enabled=True,
            )
            session = Session(
                id="open",
                npc=demo_world.npc("elda"),
                world=demo_world.scene("weapon_shop_evening"),
            )
            _, outcome = run_turn(session, query, config)
            assert outcome.ledger.calls_made == 3  # rewrite attempted
            if outcome.refined:
                assert within_refine_band(
                    len(outcome.npc_text.split()), len(target.split())
                )
            else:
                assert outcome.npc_text == outcome.draft_text
