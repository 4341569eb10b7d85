"""Exception hierarchy shared across the package."""

from __future__ import annotations


class NpcForgeError(Exception):
    """Base class for all package errors."""


# -- session / world ---------------------------------------------------------

class OutOfOrderTurn(NpcForgeError):
    """Turn timestamp does not follow the previous turn."""


class SpeakerViolation(NpcForgeError):
    """Two consecutive turns by the same speaker."""


# -- tool parsing / validation -----------------------------------------------

class ParseError(NpcForgeError):
    """Malformed function-call payload; carries the raw text for logging."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class UnknownFunction(NpcForgeError):
    """Call names a function absent from the registry."""

    def __init__(self, name: str, known: tuple[str, ...]):
        super().__init__(f"unknown function {name!r}; known: {', '.join(known)}")
        self.name = name
        self.known = known


class MissingParam(NpcForgeError):
    def __init__(self, function: str, param: str):
        super().__init__(f"{function}: missing required parameter {param!r}")
        self.function = function
        self.param = param


class BadParamType(NpcForgeError):
    def __init__(self, function: str, param: str, detail: str):
        super().__init__(f"{function}: parameter {param!r} {detail}")
        self.function = function
        self.param = param


# -- prompt composition --------------------------------------------------------

class MissingSlot(NpcForgeError):
    """A strategy in the plan requires a slot that was not filled."""

    def __init__(self, slot: str):
        super().__init__(f"unfilled slot {slot!r}")
        self.slot = slot


class PhaseMismatch(NpcForgeError):
    """Strategy or injection stage applied to the wrong pipeline phase."""


# -- gateway -------------------------------------------------------------------

class BudgetExceeded(NpcForgeError):
    """A per-utterance budget limit would be crossed.

    ``kind`` is one of ``"calls"`` or ``"input_tokens"``.
    """

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"budget exceeded: {kind}" + (f" ({detail})" if detail else ""))
        self.kind = kind


class Timeout(NpcForgeError):
    """The per-turn wall-clock budget elapsed."""


class TransportError(NpcForgeError):
    """Remote backend failure; carries an HTTP-ish status when known."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


# -- retrieval -----------------------------------------------------------------

class DimMismatch(NpcForgeError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"embedding dim mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class ProviderError(NpcForgeError):
    """Embedding provider failure."""


# -- metrics -------------------------------------------------------------------

class LengthMismatch(NpcForgeError):
    """Prediction and reference corpora differ in length (or are empty)."""


class EmptySequence(NpcForgeError):
    """Metric input sequence is empty where a non-empty one is required."""


class BadWeights(NpcForgeError):
    """Aggregate weights do not sum to 1."""


# -- corpus / files ------------------------------------------------------------

class SchemaError(NpcForgeError):
    """Document violates the expected schema; names the offending field."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class VersionError(NpcForgeError):
    """Unsupported schema_version."""


class GenerationExhausted(NpcForgeError):
    """Data generation hit its retry cap before producing enough valid instances."""


# -- pipeline ------------------------------------------------------------------

class TurnFailed(NpcForgeError):
    """A pipeline turn aborted mid-flight; carries the partial outcome.

    The session is left untouched when this is raised.
    """

    def __init__(self, cause: NpcForgeError, outcome=None):
        super().__init__(f"turn failed: {cause}")
        self.cause = cause
        self.outcome = outcome
