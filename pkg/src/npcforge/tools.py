"""Callable-function declarations, call parsing, validation, and execution.

Tools are read-only knowledge probes: executing a call looks information up
in the world knowledge base and never mutates game state. Registries are
data (JSON files); executors are referenced by built-in kind.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .errors import BadParamType, MissingParam, ParseError, SchemaError, UnknownFunction
from .world import KnowledgeEntry, KnowledgeKind


class ParamType(str, Enum):
    STRING = "string"
    INTEGER = "integer"
    ENUM = "enum"


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: ParamType
    required: bool = True
    labels: tuple[str, ...] = ()  # enum members, empty otherwise

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "type": self.type.value, "required": self.required}
        if self.labels:
            out["labels"] = list(self.labels)
        return out


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    params: tuple[ParamSpec, ...] = ()

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate param names in tool {self.name!r}")

    def param(self, name: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "params": [p.to_dict() for p in self.params],
        }


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "parameters": dict(self.arguments)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ToolCall":
        if "name" not in data:
            raise SchemaError("tool call missing field 'name'", field="name")
        args = data.get("parameters", data.get("arguments", {}))
        if not isinstance(args, Mapping):
            raise SchemaError("tool call parameters must be an object", field="parameters")
        return cls(name=str(data["name"]), arguments=dict(args))

    def __hash__(self):
        return hash((self.name, tuple(sorted((k, str(v)) for k, v in self.arguments.items()))))

    def __eq__(self, other):
        if not isinstance(other, ToolCall):
            return NotImplemented
        return self.name == other.name and dict(self.arguments) == dict(other.arguments)


class ResultStatus(str, Enum):
    OK = "ok"
    NOT_FOUND = "not_found"
    EXEC_ERROR = "exec_error"


@dataclass(frozen=True)
class ToolResult:
    call: ToolCall
    status: ResultStatus
    knowledge: KnowledgeEntry | None = None
    message: str | None = None

    def __post_init__(self):
        if self.status is ResultStatus.OK and self.knowledge is None:
            raise ValueError("Ok result requires a knowledge entry")
        if self.status is not ResultStatus.OK and not self.message:
            raise ValueError(f"{self.status.value} result requires a message")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"call": self.call.to_dict(), "status": self.status.value}
        if self.knowledge is not None:
            out["knowledge"] = self.knowledge.to_dict()
        if self.message is not None:
            out["message"] = self.message
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ToolResult":
        if "call" not in data or "status" not in data:
            raise SchemaError("tool result missing 'call' or 'status'", field="call")
        knowledge = data.get("knowledge")
        return cls(
            call=ToolCall.from_dict(data["call"]),
            status=ResultStatus(data["status"]),
            knowledge=None if knowledge is None else KnowledgeEntry.from_dict(knowledge),
            message=data.get("message"),
        )


def canonical_subject(text: str) -> str:
    """Trim, case-fold, and collapse internal whitespace for subject lookup."""
    return re.sub(r"\s+", " ", text.strip()).casefold()


# --------------------------------------------------------------------------
# Parsing model output into calls
# --------------------------------------------------------------------------

_FENCE_RE = re.compile(r"```(?:json)?\s*\n?(.*?)```", re.DOTALL)
_OPEN_FENCE_RE = re.compile(r"```(?:json)?\s*\n?(.*)\Z", re.DOTALL)


def extract_json_payloads(raw: str) -> list[str]:
    """Pull candidate JSON payloads out of model output.

    Fenced blocks win; an opening fence without a closing one yields the
    rest of the text; bare text starting with ``{`` or ``[`` is taken
    whole. Prose with no payload yields an empty list.
    """
    text = raw.strip()
    if not text:
        return []
    payloads = [m.group(1).strip() for m in _FENCE_RE.finditer(text)]
    if payloads:
        return payloads
    open_fence = _OPEN_FENCE_RE.search(text)
    if open_fence:
        return [open_fence.group(1).strip()]
    if text.startswith("{") or text.startswith("["):
        return [text]
    return []


def parse_tool_calls(raw: str) -> list[ToolCall]:
    """Extract every syntactically valid call from function-phase output.

    Accepts a fenced JSON block or bare JSON: either a list of
    ``{"name", "parameters"}`` objects, a single such object, or an object
    holding the list under ``function_calls`` / ``gold_functions``. Zero
    calls is a valid result (prose with no JSON payload, or an empty list).

    Raises ParseError on malformed payloads; never crashes on arbitrary text.
    """
    payloads = extract_json_payloads(raw)
    calls: list[ToolCall] = []
    for payload in payloads:
        if not payload:
            continue
        try:
            data = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed function payload: {exc}", raw=raw) from exc
        calls.extend(_calls_from_json(data, raw))
    return calls


def _calls_from_json(data: Any, raw: str) -> list[ToolCall]:
    if isinstance(data, Mapping):
        for key in ("function_calls", "gold_functions", "tool_calls"):
            if key in data:
                data = data[key]
                break
        else:
            if "name" in data:
                data = [data]
            else:
                raise ParseError("payload object is not a function call", raw=raw)
    if not isinstance(data, list):
        raise ParseError("payload is neither a call list nor a call object", raw=raw)
    calls = []
    for item in data:
        if not isinstance(item, Mapping) or "name" not in item:
            raise ParseError("call entry missing 'name'", raw=raw)
        args = item.get("parameters", item.get("arguments", {}))
        if not isinstance(args, Mapping):
            raise ParseError("call parameters must be an object", raw=raw)
        calls.append(ToolCall(name=str(item["name"]), arguments=dict(args)))
    return calls


# --------------------------------------------------------------------------
# Registry, validation, execution
# --------------------------------------------------------------------------

EXECUTOR_KINDS = ("lookup_by_subject", "list_all", "echo")


@dataclass(frozen=True)
class ExecutorSpec:
    """Built-in executor binding: kind plus lookup configuration.

    ``param`` names the argument holding the lookup subject (defaults to the
    first required string param); ``knowledge_kind`` filters entries.
    """

    kind: str
    param: str | None = None
    knowledge_kind: KnowledgeKind | None = None

    def __post_init__(self):
        if self.kind not in EXECUTOR_KINDS:
            raise ValueError(f"unknown executor kind {self.kind!r}")


@dataclass(frozen=True)
class ToolRegistry:
    schemas: tuple[ToolSchema, ...]
    executors: Mapping[str, ExecutorSpec]

    def __post_init__(self):
        names = [s.name for s in self.schemas]
        if len(names) != len(set(names)):
            raise ValueError("duplicate tool names in registry")
        missing = [n for n in names if n not in self.executors]
        if missing:
            raise ValueError(f"tools without executors: {missing}")

    def schema(self, name: str) -> ToolSchema | None:
        for s in self.schemas:
            if s.name == name:
                return s
        return None

    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.schemas)


def validate_call(registry: ToolRegistry, call: ToolCall) -> ToolCall:
    """Check the call against its schema; idempotent on validated calls.

    Raises UnknownFunction, MissingParam, or BadParamType. Unexpected
    argument names are rejected as BadParamType.
    """
    schema = registry.schema(call.name)
    if schema is None:
        raise UnknownFunction(call.name, registry.names())
    for param in schema.params:
        if param.required and param.name not in call.arguments:
            raise MissingParam(call.name, param.name)
    for name, value in call.arguments.items():
        param = schema.param(name)
        if param is None:
            raise BadParamType(call.name, name, "is not declared by the schema")
        if param.type is ParamType.STRING and not isinstance(value, str):
            raise BadParamType(call.name, name, f"expected string, got {type(value).__name__}")
        if param.type is ParamType.INTEGER and (isinstance(value, bool) or not isinstance(value, int)):
            raise BadParamType(call.name, name, f"expected integer, got {type(value).__name__}")
        if param.type is ParamType.ENUM and value not in param.labels:
            raise BadParamType(call.name, name, f"value {value!r} not in {list(param.labels)}")
    return ToolCall(name=call.name, arguments=dict(call.arguments))


def execute(registry: ToolRegistry, call: ToolCall, knowledge: list[KnowledgeEntry] | tuple[KnowledgeEntry, ...]) -> ToolResult:
    """Run a validated call against the knowledge base.

    Executor failures are reported inside the ToolResult (status ExecError),
    never raised past this boundary.
    """
    spec = registry.executors.get(call.name)
    if spec is None:
        return ToolResult(call, ResultStatus.EXEC_ERROR, message=f"no executor for {call.name!r}")
    try:
        if spec.kind == "lookup_by_subject":
            return _lookup_by_subject(registry, spec, call, knowledge)
        if spec.kind == "list_all":
            return _list_all(spec, call, knowledge)
        return _echo(call)
    except Exception as exc:  # executor misbehavior stays inside the result
        return ToolResult(call, ResultStatus.EXEC_ERROR, message=f"executor raised: {exc}")


def _subject_argument(registry: ToolRegistry, spec: ExecutorSpec, call: ToolCall) -> str:
    if spec.param is not None:
        return str(call.arguments.get(spec.param, ""))
    schema = registry.schema(call.name)
    if schema is not None:
        for param in schema.params:
            if param.required and param.type is ParamType.STRING:
                return str(call.arguments.get(param.name, ""))
    # fall back to the first argument in emission order
    for value in call.arguments.values():
        return str(value)
    return ""


def _filtered(spec: ExecutorSpec, knowledge) -> list[KnowledgeEntry]:
    if spec.knowledge_kind is None:
        return list(knowledge)
    return [e for e in knowledge if e.kind is spec.knowledge_kind]


def _lookup_by_subject(registry, spec, call, knowledge) -> ToolResult:
    subject = canonical_subject(_subject_argument(registry, spec, call))
    for entry in _filtered(spec, knowledge):
        if canonical_subject(entry.subject) == subject:
            return ToolResult(call, ResultStatus.OK, knowledge=entry)
    return ToolResult(call, ResultStatus.NOT_FOUND, message=f"no knowledge entry for subject {subject!r}")


def _list_all(spec, call, knowledge) -> ToolResult:
    entries = _filtered(spec, knowledge)
    subjects = sorted({e.subject for e in entries})
    body = "\n".join(f"- {s}" for s in subjects) if subjects else "(nothing available)"
    listing = KnowledgeEntry(
        id=f"listing:{call.name}",
        kind=KnowledgeKind.GENERAL,
        subject=call.name,
        body=body,
    )
    return ToolResult(call, ResultStatus.OK, knowledge=listing)


def _echo(call) -> ToolResult:
    args = ", ".join(f"{k}={v}" for k, v in sorted(call.arguments.items())) or "(no arguments)"
    entry = KnowledgeEntry(
        id=f"echo:{call.name}",
        kind=KnowledgeKind.GENERAL,
        subject=call.name,
        body=f"Acknowledged {call.name} with {args}.",
    )
    return ToolResult(call, ResultStatus.OK, knowledge=entry)


# --------------------------------------------------------------------------
# Registry files
# --------------------------------------------------------------------------

def format_tools(registry: ToolRegistry) -> str:
    """Human-readable tool listing for the ``formatted_tools`` prompt slot."""
    blocks = []
    for schema in registry.schemas:
        lines = [f"- {schema.name}: {schema.description}"]
        for p in schema.params:
            kind = p.type.value if p.type is not ParamType.ENUM else f"enum{list(p.labels)}"
            opt = "" if p.required else " (optional)"
            lines.append(f"    {p.name}: {kind}{opt}")
        blocks.append("\n".join(lines))
    return "\n".join(blocks)


def load_registry(path: str | Path) -> ToolRegistry:
    """Load a tool registry file: ``{"tools": [{name, description, params, executor}]}``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"registry file is not valid JSON: {exc}") from exc
    return registry_from_dict(data)


def registry_from_dict(data: Mapping[str, Any]) -> ToolRegistry:
    """Build a ToolRegistry from an already-parsed registry document."""
    if "tools" not in data:
        raise SchemaError("registry file missing 'tools'", field="tools")
    schemas: list[ToolSchema] = []
    executors: dict[str, ExecutorSpec] = {}
    for tool in data["tools"]:
        for key in ("name", "description", "executor"):
            if key not in tool:
                raise SchemaError(f"tool entry missing field {key!r}", field=key)
        params = tuple(
            ParamSpec(
                name=str(p["name"]),
                type=ParamType(p.get("type", "string")),
                required=bool(p.get("required", True)),
                labels=tuple(p.get("labels", ())),
            )
            for p in tool.get("params", ())
        )
        schemas.append(ToolSchema(name=tool["name"], description=tool["description"], params=params))
        executor = tool["executor"]
        if isinstance(executor, str):
            executors[tool["name"]] = ExecutorSpec(kind=executor)
        else:
            executors[tool["name"]] = ExecutorSpec(
                kind=executor["kind"],
                param=executor.get("param"),
                knowledge_kind=(
                    KnowledgeKind(executor["knowledge_kind"])
                    if "knowledge_kind" in executor
                    else None
                ),
            )
    return ToolRegistry(schemas=tuple(schemas), executors=executors)
