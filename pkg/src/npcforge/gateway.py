"""Chat-completion gateway with per-utterance budget enforcement.

One gateway call = one API call against a backend (remote or scripted
mock).  Budgets mirror the competition limits: call count and input size
are checked before dispatch, the turn deadline is enforced with a real
wall clock, and output is truncated to the output-token cap afterwards.
"""

from __future__ import annotations

import json
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from .errors import BudgetExceeded, SchemaError, Timeout, TransportError, VersionError
from .prompts import Phase, RenderedPrompt, Track
from .text import count_tokens, truncate_tokens
from .tools import ToolCall, ToolSchema

DEFAULT_MODEL = "gpt-4o-mini"
API_BASE_ENV = "NPCFORGE_API_BASE"
API_KEY_ENV = "NPCFORGE_API_KEY"
MOCK_SCRIPT_SCHEMA_VERSION = 1


def approx_token_count(text: str) -> int:
    """Deterministic token estimate used for budget accounting.

    Splits on whitespace, then peels punctuation and clitics ("I'm" counts
    as two). This is not the provider's tokenizer; budgets applied to it
    use a safety factor so real counts stay inside the hard limits.
    """
    return count_tokens(text)


@dataclass(frozen=True)
class BudgetProfile:
    """Per-utterance resource limits. ``None`` means unbounded."""

    id: str
    max_calls_per_utterance: int | None
    max_input_tokens: int | None
    max_output_tokens: int | None
    turn_timeout_ms: int
    input_safety_factor: float = 0.9

    def effective_input_limit(self) -> int | None:
        if self.max_input_tokens is None:
            return None
        return int(self.max_input_tokens * self.input_safety_factor)


API_TRACK_PROFILE = BudgetProfile(
    id="api",
    max_calls_per_utterance=2,
    max_input_tokens=2000,
    max_output_tokens=200,
    turn_timeout_ms=7000,
)
GPU_TRACK_PROFILE = BudgetProfile(
    id="gpu",
    max_calls_per_utterance=None,
    max_input_tokens=None,
    max_output_tokens=None,
    turn_timeout_ms=7000,
)

PROFILES: dict[str, BudgetProfile] = {
    API_TRACK_PROFILE.id: API_TRACK_PROFILE,
    GPU_TRACK_PROFILE.id: GPU_TRACK_PROFILE,
}


def profile_for(track: Track | str) -> BudgetProfile:
    key = track.value if isinstance(track, Track) else str(track)
    try:
        return PROFILES[key]
    except KeyError:
        raise ValueError(f"unknown budget profile {key!r}") from None


@dataclass(frozen=True)
class CompletionRequest:
    rendered: RenderedPrompt
    phase: Phase
    max_output_tokens: int
    tool_schemas: tuple[ToolSchema, ...] | None = None

    def __post_init__(self) -> None:
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int
    native_tool_calls: tuple[ToolCall, ...] | None = None


@dataclass
class CallLedger:
    """Counters for one utterance. Not thread-safe; confine to one turn."""

    utterance_id: str
    calls_made: int = 0
    elapsed_ms: int = 0
    token_in_total: int = 0
    token_out_total: int = 0
    _started_monotonic: float | None = field(default=None, repr=False)

    def start_clock(self) -> None:
        if self._started_monotonic is None:
            self._started_monotonic = time.monotonic()

    def remaining_ms(self, profile: BudgetProfile) -> float:
        """Wall-clock milliseconds left before the turn deadline."""
        if self._started_monotonic is None:
            return float(profile.turn_timeout_ms)
        spent = (time.monotonic() - self._started_monotonic) * 1000.0
        return profile.turn_timeout_ms - spent

    def record(self, response: CompletionResponse) -> None:
        self.token_in_total += response.input_tokens
        self.token_out_total += response.output_tokens
        self.elapsed_ms += response.latency_ms


class Backend(Protocol):
    model: str

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        ...


def _run_with_deadline(fn: Callable[[], CompletionResponse], timeout_s: float) -> CompletionResponse:
    """Run fn on a daemon thread; abandon it if the deadline passes."""
    outcome: list[CompletionResponse] = []
    failure: list[BaseException] = []
    done = threading.Event()

    def runner() -> None:
        try:
            outcome.append(fn())
        except BaseException as exc:
            failure.append(exc)
        finally:
            done.set()

    worker = threading.Thread(target=runner, daemon=True)
    worker.start()
    if not done.wait(timeout=timeout_s):
        raise Timeout(f"backend call exceeded deadline ({timeout_s * 1000:.0f} ms left)")
    if failure:
        raise failure[0]
    return outcome[0]


def complete(
    backend: Backend,
    request: CompletionRequest,
    ledger: CallLedger,
    profile: BudgetProfile,
    max_transport_retries: int = 1,
) -> CompletionResponse:
    """Dispatch one completion within the utterance's budget.

    Raises BudgetExceeded before spending anything when the call count or
    input size would cross the profile limits; raises Timeout when the turn
    deadline elapses mid-call. Retries a transport failure at most once,
    and only while both the call budget and the clock allow it.
    """
    ledger.start_clock()
    limit = profile.effective_input_limit()
    if limit is not None and request.rendered.approx_tokens > limit:
        raise BudgetExceeded(
            "input_tokens",
            f"{request.rendered.approx_tokens} > {limit} (cap {profile.max_input_tokens})",
        )
    attempts = 0
    while True:
        if (
            profile.max_calls_per_utterance is not None
            and ledger.calls_made + 1 > profile.max_calls_per_utterance
        ):
            raise BudgetExceeded(
                "calls", f"limit {profile.max_calls_per_utterance} per utterance"
            )
        remaining = ledger.remaining_ms(profile)
        if remaining <= 0:
            raise Timeout("turn deadline already elapsed")
        ledger.calls_made += 1
        attempts += 1
        try:
            if getattr(backend, "inline_safe", False):
                response = backend.complete(request)
            else:
                response = _run_with_deadline(
                    lambda: backend.complete(request), remaining / 1000.0
                )
        except TransportError:
            can_retry = (
                attempts <= max_transport_retries
                and ledger.remaining_ms(profile) > 0
                and (
                    profile.max_calls_per_utterance is None
                    or ledger.calls_made + 1 <= profile.max_calls_per_utterance
                )
            )
            if can_retry:
                continue
            raise
        break
    cap = request.max_output_tokens
    if profile.max_output_tokens is not None:
        cap = min(cap, profile.max_output_tokens)
    text = truncate_tokens(response.text, cap)
    if text != response.text:
        response = CompletionResponse(
            text=text,
            input_tokens=response.input_tokens,
            output_tokens=count_tokens(text),
            latency_ms=response.latency_ms,
            native_tool_calls=response.native_tool_calls,
        )
    ledger.record(response)
    return response


# -- scripted backend ----------------------------------------------------------

@dataclass(frozen=True)
class MockScriptEntry:
    """One canned response. ``status`` set means fail with that status."""

    text: str = ""
    delay_ms: int = 0
    status: int | None = None


class MockBackend:
    """Replays scripted responses in order; deterministic by construction."""

    def __init__(
        self,
        entries: Sequence[MockScriptEntry | str],
        model: str = "mock",
        loop: bool = False,
    ):
        self.model = model
        self._entries = tuple(
            e if isinstance(e, MockScriptEntry) else MockScriptEntry(text=e)
            for e in entries
        )
        self._queue: deque[MockScriptEntry] = deque(self._entries)
        self._loop = loop
        self._lock = threading.Lock()

    @property
    def inline_safe(self) -> bool:
        """True when no entry sleeps, so the gateway may skip the worker thread."""
        return all(entry.delay_ms == 0 for entry in self._entries)

    def remaining(self) -> int:
        return len(self._queue)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            if not self._queue:
                raise TransportError("mock script exhausted", status=None)
            entry = self._queue.popleft()
            if self._loop:
                self._queue.append(entry)
        if entry.delay_ms > 0:
            time.sleep(entry.delay_ms / 1000.0)
        if entry.status is not None:
            raise TransportError(f"scripted failure {entry.status}", status=entry.status)
        return CompletionResponse(
            text=entry.text,
            input_tokens=request.rendered.approx_tokens,
            output_tokens=count_tokens(entry.text),
            latency_ms=entry.delay_ms,
        )


def mock_backend_from_dict(doc: dict) -> MockBackend:
    """Build a MockBackend from a parsed script document.

    Format: {"schema_version": 1, "responses": [...], "loop": false} where
    each response is a string or {"text", "delay_ms", "status"}.
    """
    if not isinstance(doc, dict):
        raise SchemaError("mock script must be a JSON object")
    version = doc.get("schema_version")
    if version != MOCK_SCRIPT_SCHEMA_VERSION:
        raise VersionError(f"mock script: unsupported schema_version {version!r}")
    raw = doc.get("responses")
    if not isinstance(raw, list):
        raise SchemaError("mock script 'responses' must be a list", field="responses")
    entries: list[MockScriptEntry] = []
    for i, item in enumerate(raw):
        if isinstance(item, str):
            entries.append(MockScriptEntry(text=item))
        elif isinstance(item, dict):
            entries.append(
                MockScriptEntry(
                    text=str(item.get("text", "")),
                    delay_ms=int(item.get("delay_ms", 0)),
                    status=item.get("status"),
                )
            )
        else:
            raise SchemaError(
                f"mock script responses[{i}] must be a string or object",
                field="responses",
            )
    return MockBackend(entries, loop=bool(doc.get("loop", False)))


def load_mock_script(path: str | Path) -> MockBackend:
    """Build a MockBackend from a JSON script file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"mock script {path} is not valid JSON: {exc}") from exc
    return mock_backend_from_dict(doc)


# -- remote backend -------------------------------------------------------------

_ROLE_MAP = {"player": "user", "npc": "assistant", "user": "user", "assistant": "assistant"}


def _wire_messages(rendered: RenderedPrompt) -> list[dict[str, str]]:
    messages = [{"role": "system", "content": rendered.system_text}]
    for speaker, text in rendered.messages:
        messages.append({"role": _ROLE_MAP.get(speaker, "user"), "content": text})
    return messages


def _wire_tools(schemas: tuple[ToolSchema, ...] | None) -> list[dict] | None:
    if not schemas:
        return None
    wired = []
    for schema in schemas:
        properties = {}
        required = []
        for param in schema.params:
            prop: dict = {"type": "integer" if param.type.value == "integer" else "string"}
            if param.labels:
                prop["enum"] = list(param.labels)
            properties[param.name] = prop
            if param.required:
                required.append(param.name)
        wired.append(
            {
                "type": "function",
                "function": {
                    "name": schema.name,
                    "description": schema.description,
                    "parameters": {
                        "type": "object",
                        "properties": properties,
                        "required": required,
                    },
                },
            }
        )
    return wired


class OpenAICompatBackend:
    """Talks the OpenAI chat-completions wire protocol."""

    def __init__(
        self,
        model: str = DEFAULT_MODEL,
        base_url: str | None = None,
        api_key: str | None = None,
        client: httpx.Client | None = None,
    ):
        self.model = model
        self.base_url = (
            base_url or os.environ.get(API_BASE_ENV) or "https://api.openai.com/v1"
        ).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._client = client or httpx.Client(timeout=30.0)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        payload: dict = {
            "model": self.model,
            "messages": _wire_messages(request.rendered),
            "max_tokens": request.max_output_tokens,
        }
        tools = _wire_tools(request.tool_schemas)
        if tools:
            payload["tools"] = tools
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        started = time.monotonic()
        try:
            http_response = self._client.post(
                f"{self.base_url}/chat/completions", json=payload, headers=headers
            )
        except httpx.TimeoutException as exc:
            raise Timeout(f"backend request timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"backend request failed: {exc}") from exc
        latency_ms = int((time.monotonic() - started) * 1000)
        if http_response.status_code >= 400:
            raise TransportError(
                f"backend returned {http_response.status_code}: {http_response.text[:200]}",
                status=http_response.status_code,
            )
        try:
            doc = http_response.json()
            message = doc["choices"][0]["message"]
        except (ValueError, LookupError, TypeError) as exc:
            raise TransportError(f"malformed backend response: {exc}") from exc
        text = message.get("content") or ""
        native_calls: tuple[ToolCall, ...] | None = None
        raw_calls = message.get("tool_calls")
        if raw_calls:
            parsed = []
            for item in raw_calls:
                fn = item.get("function", {})
                try:
                    arguments = json.loads(fn.get("arguments") or "{}")
                except json.JSONDecodeError:
                    arguments = {}
                parsed.append(ToolCall(name=fn.get("name", ""), arguments=arguments))
            native_calls = tuple(parsed)
        usage = doc.get("usage") or {}
        return CompletionResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", request.rendered.approx_tokens)),
            output_tokens=int(usage.get("completion_tokens", count_tokens(text))),
            latency_ms=latency_ms,
            native_tool_calls=native_calls,
        )
