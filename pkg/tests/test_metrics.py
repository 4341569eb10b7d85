import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npcforge.errors import BadWeights, DimMismatch, EmptySequence, LengthMismatch
from npcforge.memory import EmbeddingVector, HashEmbeddingProvider
from npcforge.metrics import (
    DISPLAY_NAMES,
    FunctionCallRecord,
    TokenEmbeddingSequence,
    TokenSequence,
    acc_args,
    acc_name,
    aggregate,
    bleu4,
    embed_f1,
    macro_mean,
    report_to_dict,
    tokenize,
    word_f1,
    write_report,
)
from npcforge.tools import ToolCall

from .oracles import (
    acc_args_oracle,
    acc_name_oracle,
    bleu4_oracle,
    embed_f1_oracle,
    word_f1_oracle,
)

RNG_SEED = 99173


def random_calls(rng, max_calls=3):
    names = ["check_price", "check_description", "list_quests", "accept_quest"]
    calls = []
    for _ in range(rng.randint(0, max_calls)):
        name = rng.choice(names)
        args = {}
        if rng.random() < 0.8:
            args["item_name"] = rng.choice(["Buckler", "Longsword", "Man Gauche"])
        if rng.random() < 0.3:
            args["quantity"] = rng.randint(1, 5)
        calls.append(ToolCall(name, args))
    return calls


# -- accuracy oracles --------------------------------------------------------


def test_acc_matches_oracle_on_randomized_instances():
    rng = random.Random(RNG_SEED)
    preds, golds = [], []
    for _ in range(1000):
        gold = random_calls(rng)
        if rng.random() < 0.5:
            pred = list(gold)
            rng.shuffle(pred)  # order never matters
        else:
            pred = random_calls(rng)
        preds.append(pred)
        golds.append(gold)
    pred_records = [FunctionCallRecord.from_calls(c) for c in preds]
    gold_records = [FunctionCallRecord.from_calls(c) for c in golds]
    assert acc_name(pred_records, gold_records) == pytest.approx(
        acc_name_oracle(preds, golds), abs=1e-9
    )
    assert acc_args(pred_records, gold_records) == pytest.approx(
        acc_args_oracle(preds, golds), abs=1e-9
    )


def test_acc_ignores_call_order_and_duplicates():
    a = [ToolCall("f", {"x": "1"}), ToolCall("g", {})]
    b = [ToolCall("g", {}), ToolCall("f", {"x": "1"}), ToolCall("f", {"x": "1"})]
    ra = [FunctionCallRecord.from_calls(a)]
    rb = [FunctionCallRecord.from_calls(b)]
    assert acc_name(ra, rb) == 1.0
    assert acc_args(ra, rb) == 1.0


def test_acc_distinguishes_value_types():
    five_int = [FunctionCallRecord.from_calls([ToolCall("f", {"n": 5})])]
    five_str = [FunctionCallRecord.from_calls([ToolCall("f", {"n": "5"})])]
    assert acc_name(five_int, five_str) == 1.0
    assert acc_args(five_int, five_str) == 0.0


def test_acc_empty_prediction_fails_nonempty_gold():
    empty = [FunctionCallRecord.from_calls([])]
    gold = [FunctionCallRecord.from_calls([ToolCall("f", {})])]
    assert acc_name(empty, gold) == 0.0
    assert acc_name(empty, [FunctionCallRecord.from_calls([])]) == 1.0


def test_acc_rejects_mismatched_or_empty_corpora():
    record = FunctionCallRecord.from_calls([])
    with pytest.raises(LengthMismatch):
        acc_name([record], [])
    with pytest.raises(LengthMismatch):
        acc_name([], [])


# -- word F1 -----------------------------------------------------------------


def test_word_f1_matches_oracle_on_randomized_pairs():
    rng = random.Random(RNG_SEED + 1)
    vocab = ["the", "buckler", "sells", "for", "gold", "aye", "friend", ",", "."]
    for _ in range(1000):
        pred = tokenize(" ".join(rng.choices(vocab, k=rng.randint(0, 12))))
        ref = tokenize(" ".join(rng.choices(vocab, k=rng.randint(0, 12))))
        assert word_f1(pred, ref) == pytest.approx(
            word_f1_oracle(pred.tokens, ref.tokens), abs=1e-9
        )


def test_word_f1_identity_and_disjoint():
    seq = tokenize("the buckler sells for eighty gold")
    assert word_f1(seq, seq) == 1.0
    assert word_f1(tokenize("aye friend"), tokenize("no overlap here")) == 0.0
    assert word_f1(tokenize(""), tokenize("something")) == 0.0


def test_tokenize_lowercases_and_splits_clitics():
    assert tokenize("I'm HERE, friend.").tokens == ("i", "'m", "here", ",", "friend", ".")


# -- BLEU-4 ------------------------------------------------------------------


def test_bleu_identity_is_one():
    seq = tokenize("the quick brown fox jumps")
    assert bleu4(seq, seq).score == pytest.approx(1.0, abs=1e-12)


def test_bleu_hand_case():
    # candidate shorter by one word: all precisions 1, BP = exp(1 - 5/4)
    cand = tokenize("a b c d")
    ref = tokenize("a b c d e")
    profile = bleu4(cand, ref)
    assert profile.p_n == (1.0, 1.0, 1.0, 1.0)
    assert profile.bp == pytest.approx(math.exp(-0.25), abs=1e-12)
    assert profile.score == pytest.approx(0.77880, abs=1e-4)


def test_bleu_zero_overlap_and_short_candidates():
    assert bleu4(tokenize("w x y z"), tokenize("a b c d")).score == 0.0
    # fewer than 4 tokens can never form a 4-gram
    assert bleu4(tokenize("a b c"), tokenize("a b c")).score == 0.0
    assert bleu4(tokenize(""), tokenize("a b c d")).score == 0.0


def test_bleu_brevity_penalty_sides():
    longer = bleu4(tokenize("a b c d e f"), tokenize("a b c d e"))
    assert longer.bp == 1.0
    shorter = bleu4(tokenize("a b c d"), tokenize("a b c d e f"))
    assert shorter.bp == pytest.approx(math.exp(1 - 6 / 4), abs=1e-12)


def test_bleu_matches_oracle_on_randomized_pairs():
    rng = random.Random(RNG_SEED + 2)
    vocab = ["a", "b", "c", "d", "e", "f", "g"]
    for _ in range(1000):
        cand = tuple(rng.choices(vocab, k=rng.randint(0, 10)))
        ref = tuple(rng.choices(vocab, k=rng.randint(1, 10)))
        got = bleu4(TokenSequence(cand), TokenSequence(ref)).score
        want = bleu4_oracle(cand, ref)
        assert got == pytest.approx(want, abs=1e-9), (cand, ref)


@given(
    st.lists(st.sampled_from("abcde"), min_size=4, max_size=12),
    st.lists(st.sampled_from("abcde"), min_size=1, max_size=12),
)
def test_bleu_bounded(cand, ref):
    score = bleu4(TokenSequence(tuple(cand)), TokenSequence(tuple(ref))).score
    assert 0.0 <= score <= 1.0


# -- embedding F1 ------------------------------------------------------------


def unit(i: int, dim: int = 4) -> EmbeddingVector:
    values = [0.0] * dim
    values[i] = 1.0
    return EmbeddingVector(tuple(values))


def test_embed_f1_hand_matrix():
    pred = TokenEmbeddingSequence(tokens=("x",), embeddings=(unit(0),))
    ref = TokenEmbeddingSequence(tokens=("x", "y"), embeddings=(unit(0), unit(1)))
    precision, recall, f1 = embed_f1(pred, ref)
    assert precision == pytest.approx(1.0, abs=1e-9)
    assert recall == pytest.approx(0.5, abs=1e-9)
    assert f1 == pytest.approx(2 / 3, abs=1e-9)


def test_embed_f1_identity_and_orthogonal():
    seq = TokenEmbeddingSequence(tokens=("a", "b"), embeddings=(unit(0), unit(1)))
    assert embed_f1(seq, seq) == (pytest.approx(1.0), pytest.approx(1.0), pytest.approx(1.0))
    other = TokenEmbeddingSequence(tokens=("c", "d"), embeddings=(unit(2), unit(3)))
    precision, recall, f1 = embed_f1(seq, other)
    assert precision == pytest.approx(0.0, abs=1e-9)
    assert f1 == 0.0


def test_embed_f1_matches_oracle_on_random_vectors():
    rng = random.Random(RNG_SEED + 3)
    for _ in range(200):
        m, n, dim = rng.randint(1, 5), rng.randint(1, 5), 4
        pred_vecs = [[rng.uniform(-1, 1) for _ in range(dim)] for _ in range(m)]
        ref_vecs = [[rng.uniform(-1, 1) for _ in range(dim)] for _ in range(n)]
        try:
            pred = TokenEmbeddingSequence(
                tokens=tuple(f"p{i}" for i in range(m)),
                embeddings=tuple(EmbeddingVector(tuple(v)) for v in pred_vecs),
            )
            ref = TokenEmbeddingSequence(
                tokens=tuple(f"r{i}" for i in range(n)),
                embeddings=tuple(EmbeddingVector(tuple(v)) for v in ref_vecs),
            )
        except ValueError:
            continue
        got = embed_f1(pred, ref)
        want = embed_f1_oracle(pred_vecs, ref_vecs)
        for g, w in zip(got, want):
            assert g == pytest.approx(w, abs=1e-9)


def test_embed_f1_from_text_with_hash_provider():
    provider = HashEmbeddingProvider(dim=16)
    same = TokenEmbeddingSequence.from_text("aye the buckler", provider)
    _, _, f1 = embed_f1(same, same)
    assert f1 == pytest.approx(1.0, abs=1e-9)


def test_embed_f1_rejects_empty_and_mismatched():
    provider = HashEmbeddingProvider(dim=16)
    filled = TokenEmbeddingSequence.from_text("words here", provider)
    empty = TokenEmbeddingSequence.from_text("", provider)
    with pytest.raises(EmptySequence):
        embed_f1(empty, filled)
    other_dim = TokenEmbeddingSequence.from_text("words here", HashEmbeddingProvider(dim=8))
    with pytest.raises(DimMismatch):
        embed_f1(filled, other_dim)


# -- aggregation -------------------------------------------------------------


def test_aggregate_reproduces_published_means():
    a = aggregate({"acc_name": 0.587, "acc_args": 0.587}, {"embed_f1": 0.615, "bleu4": 0.615, "word_f1": 0.615})
    assert a.aggregate == 0.601
    b = aggregate({"acc_name": 0.422, "acc_args": 0.422}, {"embed_f1": 0.598, "bleu4": 0.598, "word_f1": 0.598})
    assert b.aggregate == 0.510


def test_aggregate_all_ones_is_one():
    report = aggregate(
        {"acc_name": 1.0, "acc_args": 1.0},
        {"embed_f1": 1.0, "bleu4": 1.0, "word_f1": 1.0},
    )
    assert report.aggregate == 1.0


def test_aggregate_custom_weights():
    report = aggregate(
        {"acc_name": 1.0, "acc_args": 0.0},
        {"embed_f1": 0.5, "bleu4": 0.5, "word_f1": 0.5},
        task_weights={"task1": 0.25, "task2": 0.75},
        task1_weights={"acc_name": 1.0, "acc_args": 0.0},
    )
    assert report.corpus["task1"] == 1.0
    assert report.aggregate == pytest.approx(0.25 * 1.0 + 0.75 * 0.5, abs=1e-12)


def test_aggregate_rejects_bad_weights():
    task1 = {"acc_name": 1.0, "acc_args": 1.0}
    task2 = {"embed_f1": 1.0, "bleu4": 1.0, "word_f1": 1.0}
    with pytest.raises(BadWeights):
        aggregate(task1, task2, task1_weights={"acc_name": 0.9, "acc_args": 0.2})
    with pytest.raises(BadWeights):
        aggregate(task1, task2, task1_weights={"acc_name": 1.0, "mystery": 0.0})
    with pytest.raises(BadWeights):
        aggregate(task1, task2, task_weights={})


@settings(max_examples=60, deadline=None)
@given(
    scores=st.lists(st.floats(0, 1), min_size=5, max_size=5),
)
def test_aggregate_convexity(scores):
    t1 = {"acc_name": scores[0], "acc_args": scores[1]}
    t2 = {"embed_f1": scores[2], "bleu4": scores[3], "word_f1": scores[4]}
    report = aggregate(t1, t2)
    assert min(scores) - 1e-9 <= report.aggregate <= max(scores) + 1e-9


def test_macro_mean():
    assert macro_mean([0.25, 0.75]) == 0.5
    with pytest.raises(LengthMismatch):
        macro_mean([])


def test_report_serialization(tmp_path):
    report = aggregate(
        {"acc_name": 1.0, "acc_args": 0.5},
        {"embed_f1": 0.9, "bleu4": 0.8, "word_f1": 0.7},
        per_instance=[{"acc_name": 1.0}],
    )
    path = tmp_path / "report.json"
    write_report(report, path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert doc["aggregate"] == report.aggregate
    assert doc["corpus_display"]["Function name exact match"] == 1.0
    assert doc["per_instance"] == [{"acc_name": 1.0}]
    # aggregate must be recomputable from the serialized pieces
    t1 = sum(doc["corpus"][k] * w for k, w in doc["component_weights"]["task1"].items())
    t2 = sum(doc["corpus"][k] * w for k, w in doc["component_weights"]["task2"].items())
    recomputed = sum({"task1": t1, "task2": t2}[k] * w for k, w in doc["weights"].items())
    assert recomputed == pytest.approx(doc["aggregate"], abs=1e-9)


def test_display_names_cover_all_metrics():
    assert set(DISPLAY_NAMES) == {"acc_name", "acc_args", "embed_f1", "bleu4", "word_f1"}
    assert DISPLAY_NAMES["embed_f1"] == "BERTScore"
