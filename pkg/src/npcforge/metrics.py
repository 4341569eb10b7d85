"""Scoring for function-call accuracy and dialogue quality.

Function calling is scored by exact set equality over names and over
canonicalized argument maps. Dialogue is scored by strict (unsmoothed)
BLEU-4, word-level F1 over token sets, and a greedy embedding-similarity
F1. An aggregate combines both task groups into one number.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import BadWeights, DimMismatch, EmptySequence, LengthMismatch
from .memory import EmbeddingProvider, EmbeddingVector, cosine
from .text import split_tokens
from .tools import ToolCall

_WEIGHT_TOLERANCE = 1e-9

# How the metrics are titled in report files.
DISPLAY_NAMES: Mapping[str, str] = {
    "acc_name": "Function name exact match",
    "acc_args": "Function argument exact match",
    "embed_f1": "BERTScore",
    "bleu4": "BLEU-4",
    "word_f1": "Word-level F1",
}

DEFAULT_TASK_WEIGHTS: Mapping[str, float] = {"task1": 0.5, "task2": 0.5}
DEFAULT_TASK1_WEIGHTS: Mapping[str, float] = {"acc_name": 0.5, "acc_args": 0.5}
DEFAULT_TASK2_WEIGHTS: Mapping[str, float] = {
    "bleu4": 1.0 / 3.0,
    "word_f1": 1.0 / 3.0,
    "embed_f1": 1.0 / 3.0,
}


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if any(not token for token in self.tokens):
            raise ValueError("token sequences cannot contain empty tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def token_set(self) -> frozenset[str]:
        return frozenset(self.tokens)


def tokenize(text: str) -> TokenSequence:
    """Lowercase and split into words, clitics, and punctuation marks."""
    return TokenSequence(tuple(split_tokens(text.lower())))


def canonical_arguments(arguments: Mapping[str, object]) -> tuple[tuple[str, str], ...]:
    """Key-sorted (name, serialized value) pairs; 5 and "5" stay distinct."""
    return tuple(
        (key, json.dumps(arguments[key], sort_keys=True, ensure_ascii=False))
        for key in sorted(arguments)
    )


@dataclass(frozen=True)
class FunctionCallRecord:
    """The name set and argument set one instance's calls reduce to."""

    names: frozenset[str]
    args: frozenset[tuple[str, tuple[tuple[str, str], ...]]]

    def __post_init__(self) -> None:
        arg_names = {name for name, _ in self.args}
        if not arg_names <= self.names:
            raise ValueError("argument records name functions missing from the name set")

    @classmethod
    def from_calls(cls, calls: Sequence[ToolCall]) -> "FunctionCallRecord":
        names = frozenset(call.name for call in calls)
        args = frozenset(
            (call.name, canonical_arguments(call.arguments)) for call in calls
        )
        return cls(names=names, args=args)


def _require_same_length(
    preds: Sequence[object], refs: Sequence[object]
) -> int:
    if len(preds) != len(refs):
        raise LengthMismatch(
            f"prediction and reference counts differ: {len(preds)} vs {len(refs)}"
        )
    if not preds:
        raise LengthMismatch("cannot score an empty corpus")
    return len(preds)


def acc_name(
    preds: Sequence[FunctionCallRecord], refs: Sequence[FunctionCallRecord]
) -> float:
    """Fraction of instances whose predicted name set equals the reference's."""
    n = _require_same_length(preds, refs)
    hits = sum(1 for pred, ref in zip(preds, refs) if pred.names == ref.names)
    return hits / n


def acc_args(
    preds: Sequence[FunctionCallRecord], refs: Sequence[FunctionCallRecord]
) -> float:
    """Fraction of instances whose canonical argument sets match exactly."""
    n = _require_same_length(preds, refs)
    hits = sum(1 for pred, ref in zip(preds, refs) if pred.args == ref.args)
    return hits / n


@dataclass(frozen=True)
class BleuProfile:
    p_n: tuple[float, float, float, float]
    c: int
    r: int
    bp: float
    score: float


def _ngram_counts(tokens: tuple[str, ...], n: int) -> Counter:
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


def bleu4(candidate: TokenSequence, reference: TokenSequence) -> BleuProfile:
    """Strict sentence BLEU-4: no smoothing, zero on any empty precision.

    A candidate shorter than 4 tokens has no 4-grams, so its score is 0 by
    the same rule. bp follows the standard brevity penalty; an empty
    candidate scores 0 with bp fixed at 0.
    """
    c = len(candidate)
    r = len(reference)
    precisions: list[float] = []
    for n in range(1, 5):
        total = max(c - n + 1, 0)
        if total == 0:
            precisions.append(0.0)
            continue
        cand_counts = _ngram_counts(candidate.tokens, n)
        ref_counts = _ngram_counts(reference.tokens, n)
        clipped = sum(
            min(count, ref_counts.get(gram, 0)) for gram, count in cand_counts.items()
        )
        precisions.append(clipped / total)
    p_n = (precisions[0], precisions[1], precisions[2], precisions[3])
    if c == 0:
        return BleuProfile(p_n=p_n, c=c, r=r, bp=0.0, score=0.0)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    if any(p == 0.0 for p in p_n):
        score = 0.0
    else:
        score = bp * math.exp(math.fsum(math.log(p) for p in p_n) / 4.0)
    return BleuProfile(p_n=p_n, c=c, r=r, bp=bp, score=min(score, 1.0))


def word_f1(pred: TokenSequence, ref: TokenSequence) -> float:
    """F1 over the two token sets; 0 when there is no overlap to score."""
    pred_set = pred.token_set()
    ref_set = ref.token_set()
    overlap = len(pred_set & ref_set)
    precision = overlap / len(pred_set) if pred_set else 0.0
    recall = overlap / len(ref_set) if ref_set else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class TokenEmbeddingSequence:
    tokens: TokenSequence
    embeddings: tuple[EmbeddingVector, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.embeddings):
            raise ValueError("one embedding per token is required")
        dims = {vector.dim for vector in self.embeddings}
        if len(dims) > 1:
            raise ValueError("token embeddings must share one dimension")

    @classmethod
    def from_text(
        cls, text: str, provider: EmbeddingProvider
    ) -> "TokenEmbeddingSequence":
        tokens = tokenize(text)
        vectors = tuple(provider.embed(token) for token in tokens.tokens)
        return cls(tokens=tokens, embeddings=vectors)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int | None:
        return self.embeddings[0].dim if self.embeddings else None


def embed_f1(
    pred: TokenEmbeddingSequence, ref: TokenEmbeddingSequence
) -> tuple[float, float, float]:
    """Greedy soft-matching scores (P, R, F1) between token embeddings.

    Each predicted token claims its best cosine match in the reference for
    precision, and vice versa for recall. F1 is clamped into [0, 1]; P and
    R are reported raw.
    """
    if len(pred) == 0 or len(ref) == 0:
        raise EmptySequence("embedding F1 needs non-empty sequences on both sides")
    if pred.dim != ref.dim:
        raise DimMismatch(pred.dim or 0, ref.dim or 0)
    similarity = [
        [cosine(x, y) for y in ref.embeddings] for x in pred.embeddings
    ]
    precision = math.fsum(max(row) for row in similarity) / len(pred)
    recall = (
        math.fsum(max(similarity[i][j] for i in range(len(pred))) for j in range(len(ref)))
        / len(ref)
    )
    if precision + recall == 0.0:
        return precision, recall, 0.0
    f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, max(0.0, min(1.0, f1))


@dataclass(frozen=True)
class EvalReport:
    per_instance: tuple[Mapping[str, float], ...]
    corpus: Mapping[str, float]
    weights: Mapping[str, float]
    aggregate: float
    component_weights: Mapping[str, Mapping[str, float]] = field(default_factory=dict)


def _check_group(weights: Mapping[str, float], scores: Mapping[str, float], group: str) -> None:
    if not weights:
        raise BadWeights(f"{group}: empty weight group")
    missing = set(weights) - set(scores)
    if missing:
        raise BadWeights(f"{group}: weights name unknown metrics {sorted(missing)}")
    total = math.fsum(weights.values())
    if abs(total - 1.0) > _WEIGHT_TOLERANCE:
        raise BadWeights(f"{group}: weights sum to {total}, expected 1")


def _weighted(scores: Mapping[str, float], weights: Mapping[str, float]) -> float:
    # Uniform weights take the plain-mean path: summing first avoids the
    # per-product rounding of score * (1/n), so mean(0.422, 0.598) == 0.51.
    values = list(weights.values())
    if len(set(values)) == 1:
        return math.fsum(scores[key] for key in weights) / len(weights)
    return math.fsum(scores[key] * weight for key, weight in weights.items())


def aggregate(
    task1: Mapping[str, float],
    task2: Mapping[str, float],
    task_weights: Mapping[str, float] | None = None,
    task1_weights: Mapping[str, float] | None = None,
    task2_weights: Mapping[str, float] | None = None,
    per_instance: Sequence[Mapping[str, float]] = (),
) -> EvalReport:
    """Collapse the two task score maps into one report.

    Each weight group must sum to 1. With the defaults, the overall score
    is the plain mean of the two task scores, each task being the mean of
    its own components.
    """
    tw = dict(task_weights if task_weights is not None else DEFAULT_TASK_WEIGHTS)
    t1w = dict(task1_weights if task1_weights is not None else DEFAULT_TASK1_WEIGHTS)
    t2w = dict(task2_weights if task2_weights is not None else DEFAULT_TASK2_WEIGHTS)
    _check_group(t1w, task1, "task1")
    _check_group(t2w, task2, "task2")
    task_scores = {"task1": _weighted(task1, t1w), "task2": _weighted(task2, t2w)}
    _check_group(tw, task_scores, "tasks")
    overall = _weighted(task_scores, tw)
    corpus = {**task1, **task2, **task_scores}
    return EvalReport(
        per_instance=tuple(dict(row) for row in per_instance),
        corpus=corpus,
        weights=tw,
        aggregate=overall,
        component_weights={"task1": t1w, "task2": t2w},
    )


def macro_mean(values: Sequence[float]) -> float:
    if not values:
        raise LengthMismatch("cannot average an empty sequence")
    return math.fsum(values) / len(values)


def report_to_dict(report: EvalReport) -> dict:
    """Serializable report with the display column titles alongside keys."""
    return {
        "per_instance": [dict(row) for row in report.per_instance],
        "corpus": dict(report.corpus),
        "corpus_display": {
            DISPLAY_NAMES.get(key, key): value for key, value in report.corpus.items()
        },
        "weights": dict(report.weights),
        "component_weights": {
            group: dict(weights) for group, weights in report.component_weights.items()
        },
        "aggregate": report.aggregate,
    }


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
