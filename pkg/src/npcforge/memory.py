"""Retrieval memory over past player/NPC interactions.

An index stores one embedding per interaction. Retrieval is a plain
linear scan by cosine similarity; hits feed the prompt at two points
(function selection and dialogue drafting) and gate the optional
rewrite of a drafted reply against the closest golden response.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from . import gateway
from .errors import (
    BudgetExceeded,
    DimMismatch,
    PhaseMismatch,
    ProviderError,
    SchemaError,
    Timeout,
    TransportError,
    VersionError,
)
from .prompts import Phase, PromptPlan, RenderedPrompt, fill_slots, load_plain_template
from .text import split_tokens
from .tools import ToolCall

INDEX_SCHEMA_VERSION = 1
DEFAULT_K = 3
DEFAULT_MIN_SIM = 0.35
DEFAULT_REFINE_THRESHOLD = 0.8
REFINE_LENGTH_TOLERANCE = 0.3


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding must have at least one component")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding contains non-finite components")

    @property
    def dim(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; zero vectors compare as 0."""
    if a.dim != b.dim:
        raise DimMismatch(a.dim, b.dim)
    denom = a.norm() * b.norm()
    if denom == 0.0:
        return 0.0
    dot = sum(x * y for x, y in zip(a.values, b.values))
    return dot / denom


class EmbeddingProvider(Protocol):
    provider_id: str
    dim: int

    def embed(self, text: str) -> EmbeddingVector:
        ...


class HashEmbeddingProvider:
    """Deterministic pseudo-embeddings for tests and offline runs.

    Scheme: casefold the text, split into tokens, and for each token take
    its sha256 digest. The digest yields four (bucket, sign) pairs: pair k
    uses bytes [4k, 4k+4) big-endian mod dim as the bucket and the parity
    of byte 16+k as the sign. Contributions accumulate over tokens and the
    vector is L2-normalized. Texts with no tokens (or full cancellation)
    map to the unit vector on component 0.
    """

    def __init__(self, dim: int = 16):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.provider_id = f"hash-{dim}"

    def embed(self, text: str) -> EmbeddingVector:
        values = [0.0] * self.dim
        for token in split_tokens(text.casefold()):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            for k in range(4):
                bucket = int.from_bytes(digest[4 * k : 4 * k + 4], "big") % self.dim
                sign = 1.0 if digest[16 + k] % 2 == 0 else -1.0
                values[bucket] += sign
        norm = math.sqrt(sum(v * v for v in values))
        if norm == 0.0:
            values[0] = 1.0
            norm = 1.0
        return EmbeddingVector(tuple(v / norm for v in values))


class TableEmbeddingProvider:
    """Serves precomputed vectors keyed by the sha256 of the exact text."""

    def __init__(self, table: Mapping[str, Sequence[float]], dim: int, provider_id: str = "table"):
        self.dim = dim
        self.provider_id = provider_id
        self._table = {key: tuple(float(v) for v in vec) for key, vec in table.items()}
        for key, vec in self._table.items():
            if len(vec) != dim:
                raise DimMismatch(dim, len(vec))

    @staticmethod
    def text_key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @classmethod
    def from_file(cls, path: str | Path) -> "TableEmbeddingProvider":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("schema_version") != INDEX_SCHEMA_VERSION:
            raise VersionError(f"embedding table {path}: unsupported schema_version")
        return cls(
            doc.get("vectors", {}),
            dim=int(doc["dim"]),
            provider_id=str(doc.get("provider_id", "table")),
        )

    def embed(self, text: str) -> EmbeddingVector:
        key = self.text_key(text)
        vec = self._table.get(key)
        if vec is None:
            raise ProviderError(f"no precomputed vector for text key {key[:12]}…")
        return EmbeddingVector(vec)


class RemoteEmbeddingProvider:
    """Embeddings over an OpenAI-compatible /embeddings endpoint."""

    def __init__(
        self,
        model: str,
        dim: int,
        base_url: str | None = None,
        api_key: str | None = None,
        client: httpx.Client | None = None,
    ):
        self.model = model
        self.dim = dim
        self.provider_id = f"remote-{model}"
        self.base_url = (
            base_url or os.environ.get(gateway.API_BASE_ENV) or "https://api.openai.com/v1"
        ).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(gateway.API_KEY_ENV, "")
        self._client = client or httpx.Client(timeout=30.0)

    def embed(self, text: str) -> EmbeddingVector:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self._client.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": text},
                headers=headers,
            )
        except httpx.HTTPError as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
        if response.status_code >= 400:
            raise ProviderError(f"embedding backend returned {response.status_code}")
        try:
            values = response.json()["data"][0]["embedding"]
        except (ValueError, LookupError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {exc}") from exc
        vector = EmbeddingVector(tuple(float(v) for v in values))
        if vector.dim != self.dim:
            raise DimMismatch(self.dim, vector.dim)
        return vector


def embed(provider: EmbeddingProvider, text: str) -> EmbeddingVector:
    vector = provider.embed(text)
    if vector.dim != provider.dim:
        raise DimMismatch(provider.dim, vector.dim)
    return vector


def interaction_text(player_text: str, npc_text: str) -> str:
    """The text an interaction is embedded under: both sides, concatenated."""
    return f"{player_text}\n{npc_text}"


@dataclass(frozen=True)
class RetrievalRecord:
    id: str
    player_text: str
    npc_text: str
    embedding: EmbeddingVector
    gold_functions: tuple[ToolCall, ...] | None = None
    source: str = ""


@dataclass(frozen=True)
class RetrievalIndex:
    records: tuple[RetrievalRecord, ...]
    provider_id: str
    dim: int

    def __post_init__(self) -> None:
        for record in self.records:
            if record.embedding.dim != self.dim:
                raise DimMismatch(self.dim, record.embedding.dim)

    def __len__(self) -> int:
        return len(self.records)


def build_index(
    interactions: Iterable[tuple[str, str, str, Sequence[ToolCall] | None]],
    provider: EmbeddingProvider,
    source: str = "",
) -> RetrievalIndex:
    """Embed (id, player_text, npc_text, gold_functions) rows into an index."""
    records = []
    for record_id, player_text, npc_text, gold in interactions:
        vector = embed(provider, interaction_text(player_text, npc_text))
        records.append(
            RetrievalRecord(
                id=record_id,
                player_text=player_text,
                npc_text=npc_text,
                embedding=vector,
                gold_functions=tuple(gold) if gold is not None else None,
                source=source,
            )
        )
    return RetrievalIndex(tuple(records), provider_id=provider.provider_id, dim=provider.dim)


def retrieve(
    index: RetrievalIndex,
    query: EmbeddingVector,
    k: int = DEFAULT_K,
    min_sim: float = DEFAULT_MIN_SIM,
) -> list[tuple[RetrievalRecord, float]]:
    """Top-k records by cosine similarity, descending.

    Ties break toward the earlier insertion index; records below min_sim
    are dropped. Linear scan over the whole store, by contract.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not -1.0 <= min_sim <= 1.0:
        raise ValueError("min_sim must lie in [-1, 1]")
    if index.records and query.dim != index.dim:
        raise DimMismatch(index.dim, query.dim)
    scored = []
    for position, record in enumerate(index.records):
        similarity = cosine(query, record.embedding)
        if similarity >= min_sim:
            scored.append((position, record, similarity))
    scored.sort(key=lambda item: (-item[2], item[0]))
    return [(record, similarity) for _, record, similarity in scored[:k]]


class InjectionStage(Enum):
    FUNCTION_SELECTION = "function_selection"
    DIALOGUE_DRAFTING = "dialogue_drafting"


_STAGE_PHASE = {
    InjectionStage.FUNCTION_SELECTION: Phase.FUNCTION,
    InjectionStage.DIALOGUE_DRAFTING: Phase.DIALOGUE,
}


def _function_demo(record: RetrievalRecord) -> str:
    calls = [call.to_dict() for call in (record.gold_functions or ())]
    return f"Player: '{record.player_text}'\nFunctions: {json.dumps(calls)}"


def inject(
    stage: InjectionStage,
    plan: PromptPlan,
    hits: Sequence[tuple[RetrievalRecord, float]],
) -> PromptPlan:
    """Fold retrieval hits into the plan's slots.

    Function selection appends demonstrations to the few-shot block;
    dialogue drafting appends past replies to the similar-responses slot.
    Zero hits returns the plan untouched. Not idempotent: injecting twice
    duplicates the text, so the pipeline injects once per stage per turn.
    """
    if _STAGE_PHASE[stage] is not plan.phase:
        raise PhaseMismatch(
            f"{stage.value} injection requires a {_STAGE_PHASE[stage].value}-phase plan"
        )
    if not hits:
        return plan
    if stage is InjectionStage.FUNCTION_SELECTION:
        block = "\n\n".join(_function_demo(record) for record, _ in hits)
        existing = plan.slots.get("few_shot_block", "")
        merged = f"{existing}\n\n{block}" if existing else block
        return plan.with_slots(few_shot_block=merged)
    lines = "\n".join(f"- '{record.npc_text}'" for record, _ in hits)
    existing = plan.slots.get("similar_responses", "")
    merged = f"{existing}\n{lines}" if existing else lines
    return plan.with_slots(similar_responses=merged)


def _word_count(text: str) -> int:
    return len(text.split())


def within_refine_band(word_count: int, target_words: int) -> bool:
    if target_words <= 0:
        return word_count == 0
    return abs(word_count - target_words) <= REFINE_LENGTH_TOLERANCE * target_words


def refine(
    draft: str,
    best_hit: tuple[RetrievalRecord, float] | None,
    backend: gateway.Backend,
    ledger: gateway.CallLedger,
    profile: gateway.BudgetProfile,
    threshold: float = DEFAULT_REFINE_THRESHOLD,
    template_dir: str | Path | None = None,
    strict: bool = False,
) -> str:
    """Rewrite the draft against the closest golden response, if warranted.

    The rewrite runs only when the hit's similarity reaches the threshold
    and the utterance budget still allows another call; in every other
    case, and on any backend failure, the draft comes back unchanged. A
    rewrite whose length leaves the ±30% band around the golden response's
    word count is also discarded. strict=True propagates BudgetExceeded
    instead of swallowing it.
    """
    if not draft:
        raise ValueError("draft must be non-empty")
    if best_hit is None:
        return draft
    record, similarity = best_hit
    if similarity < threshold:
        return draft
    if (
        profile.max_calls_per_utterance is not None
        and ledger.calls_made + 1 > profile.max_calls_per_utterance
    ):
        if strict:
            raise BudgetExceeded(
                "calls", f"refine would exceed {profile.max_calls_per_utterance} calls"
            )
        return draft
    target_words = _word_count(record.npc_text)
    template = load_plain_template("dialogue/refine.txt", template_dir)
    system_text = fill_slots(
        template,
        {
            "target_words": str(target_words),
            "reference": record.npc_text,
            "draft": draft,
        },
    )
    rendered = RenderedPrompt(
        phase=Phase.DIALOGUE,
        system_text=system_text,
        approx_tokens=gateway.approx_token_count(system_text),
    )
    request = gateway.CompletionRequest(
        rendered=rendered,
        phase=Phase.DIALOGUE,
        max_output_tokens=profile.max_output_tokens or 200,
    )
    try:
        response = gateway.complete(backend, request, ledger, profile)
    except BudgetExceeded:
        if strict:
            raise
        return draft
    except (Timeout, TransportError):
        return draft
    rewritten = response.text.strip()
    if not rewritten or not within_refine_band(_word_count(rewritten), target_words):
        return draft
    return rewritten


# -- persistence -----------------------------------------------------------------

def index_to_dict(index: RetrievalIndex) -> dict:
    return {
        "schema_version": INDEX_SCHEMA_VERSION,
        "provider_id": index.provider_id,
        "dim": index.dim,
        "records": [
            {
                "id": record.id,
                "player_text": record.player_text,
                "npc_text": record.npc_text,
                "gold_functions": (
                    [call.to_dict() for call in record.gold_functions]
                    if record.gold_functions is not None
                    else None
                ),
                "embedding": list(record.embedding.values),
                "source": record.source,
            }
            for record in index.records
        ],
    }


def save_index(index: RetrievalIndex, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(index_to_dict(index), indent=2) + "\n", encoding="utf-8"
    )


def index_from_dict(doc: Mapping) -> RetrievalIndex:
    if not isinstance(doc, Mapping):
        raise SchemaError("index document must be a JSON object")
    if doc.get("schema_version") != INDEX_SCHEMA_VERSION:
        raise VersionError(
            f"index document: unsupported schema_version {doc.get('schema_version')!r}"
        )
    try:
        dim = int(doc["dim"])
        provider_id = str(doc["provider_id"])
        raw_records = doc["records"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"index document is missing required fields: {exc}") from exc
    records = []
    for i, raw in enumerate(raw_records):
        try:
            gold = raw.get("gold_functions")
            records.append(
                RetrievalRecord(
                    id=str(raw["id"]),
                    player_text=str(raw["player_text"]),
                    npc_text=str(raw["npc_text"]),
                    embedding=EmbeddingVector(tuple(float(v) for v in raw["embedding"])),
                    gold_functions=(
                        tuple(ToolCall.from_dict(c) for c in gold)
                        if gold is not None
                        else None
                    ),
                    source=str(raw.get("source", "")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(
                f"index records[{i}] malformed: {exc}", field=f"records[{i}]"
            ) from exc
    return RetrievalIndex(tuple(records), provider_id=provider_id, dim=dim)


def load_index(path: str | Path) -> RetrievalIndex:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"index file {path} is not valid JSON: {exc}") from exc
    return index_from_dict(doc)
