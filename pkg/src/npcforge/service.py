"""HTTP service exposing the turn pipeline to the playground.

All state is in memory: one pipeline config and one growing Session per
session id. Turns on one session are serialized with a non-blocking
lock, so a second concurrent POST gets 409 instead of corrupting the
transcript. Endpoints are plain ``def`` so the server runs them in its
worker threadpool.
"""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import gateway, memory
from .errors import BudgetExceeded, Timeout, TransportError, TurnFailed
from .pipeline import EventLog, PipelineConfig, TurnOutcome, run_turn, split_strategies
from .prompts import StrategyId, Track, default_plan, Phase
from .runner import RunConfig, chat_backend, load_registries, registry_for
from .session import Session
from .tools import ToolRegistry
from .world import RoleKind, World, load_world


@dataclass
class ServiceSettings:
    """Everything create_app needs; tests inject shrunken budget profiles here."""

    world: World
    registries: Mapping[RoleKind, ToolRegistry]
    backend_factory: Callable[[], gateway.Backend]
    profiles: Mapping[str, gateway.BudgetProfile] = field(
        default_factory=lambda: dict(gateway.PROFILES)
    )
    default_track: str = "api"
    index: memory.RetrievalIndex | None = None
    retrieval_k: int = memory.DEFAULT_K
    retrieval_min_sim: float = memory.DEFAULT_MIN_SIM
    refine_enabled: bool = False
    refine_threshold: float = memory.DEFAULT_REFINE_THRESHOLD
    history_window: int = 6
    max_output_tokens: int = 200
    template_dir: str | None = None
    persist_dir: str | None = None
    static_dir: str | None = None
    event_log: EventLog | None = None

    @classmethod
    def from_run_config(
        cls,
        config: RunConfig,
        persist_dir: str | None = None,
        static_dir: str | None = None,
    ) -> "ServiceSettings":
        index = memory.load_index(config.index_file) if config.index_file else None
        return cls(
            world=load_world(config.world_file),
            registries=load_registries(config.registry_files),
            backend_factory=lambda: chat_backend(config),
            default_track=config.track,
            index=index,
            retrieval_k=config.retrieval_k,
            retrieval_min_sim=config.retrieval_min_sim,
            refine_enabled=config.refine,
            refine_threshold=config.refine_threshold,
            history_window=config.history_window,
            max_output_tokens=config.max_output_tokens,
            template_dir=config.template_dir,
            persist_dir=persist_dir,
            static_dir=static_dir,
            event_log=EventLog(Path(config.event_log)) if config.event_log else None,
        )


class CreateSessionBody(BaseModel):
    npc_id: str
    scene: str
    strategies: list[str] | None = None
    track: str | None = None


class TurnBody(BaseModel):
    player_text: str


@dataclass
class _SessionEntry:
    session: Session
    config: PipelineConfig
    outcomes: list[TurnOutcome]
    lock: threading.Lock


def _error(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": code, "detail": detail})


def _turn_payload(entry: _SessionEntry, outcome: TurnOutcome) -> dict[str, Any]:
    ledger = outcome.ledger
    return {
        "session_id": entry.session.id,
        "npc_text": outcome.npc_text,
        "tool_calls": [call.to_dict() for call in outcome.tool_calls],
        "tool_results": [result.to_dict() for result in outcome.tool_results],
        "retrieval_hits": {
            stage: [hit.to_dict() for hit in hits]
            for stage, hits in outcome.retrieval_hits.items()
        },
        "budget": {
            "calls_made": ledger.calls_made,
            "tokens_in": ledger.token_in_total,
            "tokens_out": ledger.token_out_total,
        },
        "refined": outcome.refined,
        "turn_count": len(entry.session.turns),
    }


def create_app(settings: ServiceSettings) -> FastAPI:
    app = FastAPI(title="npcforge", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    def invalid_body(request: Request, exc: RequestValidationError) -> JSONResponse:
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(part) for part in first.get("loc", ()))
        message = first.get("msg", "invalid request body")
        return _error(400, "bad_request", f"{where}: {message}" if where else message)

    sessions: dict[str, _SessionEntry] = {}
    store_lock = threading.Lock()
    ids = itertools.count(1)

    persist_dir = Path(settings.persist_dir) if settings.persist_dir else None
    if persist_dir:
        persist_dir.mkdir(parents=True, exist_ok=True)

    def _persist(entry: _SessionEntry, event: dict[str, Any]) -> None:
        if not persist_dir:
            return
        line = json.dumps(event, ensure_ascii=False, sort_keys=True)
        with (persist_dir / f"{entry.session.id}.jsonl").open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    @app.get("/v1/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.get("/v1/npcs")
    def npcs() -> dict[str, Any]:
        roster = []
        for npc in settings.world.npcs:
            entry = npc.to_dict()
            entry["role_display"] = npc.role.display()
            roster.append(entry)
        scenes = {
            name: {**scene.to_dict(), "display": scene.scene_display()}
            for name, scene in settings.world.scenes.items()
        }
        defaults = {}
        for track in Track:
            merged = list(default_plan(track, Phase.FUNCTION).strategies)
            for strategy in default_plan(track, Phase.DIALOGUE).strategies:
                if strategy not in merged:
                    merged.append(strategy)
            defaults[track.value] = [s.value for s in merged]
        return {
            "npcs": roster,
            "scenes": scenes,
            "strategies": [s.value for s in StrategyId],
            "tracks": [t.value for t in Track],
            "default_strategies": defaults,
            "default_track": settings.default_track,
        }

    @app.post("/v1/sessions")
    def create_session(body: CreateSessionBody) -> Any:
        try:
            npc = settings.world.npc(body.npc_id)
        except KeyError:
            return _error(404, "unknown_npc", f"no npc {body.npc_id!r}")
        try:
            scene = settings.world.scene(body.scene)
        except KeyError:
            return _error(404, "unknown_scene", f"no scene {body.scene!r}")
        try:
            track = Track.parse(body.track or settings.default_track)
        except ValueError as exc:
            return _error(400, "bad_track", str(exc))
        profile = settings.profiles.get(track.value)
        if profile is None:
            return _error(400, "bad_track", f"no budget profile for track {track.value!r}")
        if body.strategies is None:
            function_set = default_plan(track, Phase.FUNCTION).strategies
            dialogue_set = default_plan(track, Phase.DIALOGUE).strategies
        else:
            try:
                function_set, dialogue_set = split_strategies(body.strategies)
            except ValueError as exc:
                return _error(400, "bad_strategy", str(exc))
        config = PipelineConfig(
            world=settings.world,
            registry=registry_for(npc, settings.registries),
            backend=settings.backend_factory(),
            profile=profile,
            function_strategies=function_set,
            dialogue_strategies=dialogue_set,
            index=settings.index,
            provider=(
                memory.HashEmbeddingProvider(dim=settings.index.dim)
                if settings.index is not None
                else None
            ),
            retrieval_k=settings.retrieval_k,
            retrieval_min_sim=settings.retrieval_min_sim,
            refine_enabled=settings.refine_enabled,
            refine_threshold=settings.refine_threshold,
            history_window=settings.history_window,
            max_output_tokens=settings.max_output_tokens,
            template_dir=settings.template_dir,
            event_log=settings.event_log,
        )
        strategy_names = []
        for strategy in function_set + dialogue_set:
            if strategy.value not in strategy_names:
                strategy_names.append(strategy.value)
        with store_lock:
            session_id = f"s-{next(ids):04d}"
            entry = _SessionEntry(
                session=Session(
                    id=session_id,
                    npc=npc,
                    world=scene,
                    strategy_set=tuple(strategy_names),
                    budget_profile=track.value,
                ),
                config=config,
                outcomes=[],
                lock=threading.Lock(),
            )
            sessions[session_id] = entry
        _persist(
            entry,
            {
                "type": "session_created",
                "session_id": session_id,
                "npc_id": npc.id,
                "scene": body.scene,
                "track": track.value,
                "strategies": strategy_names,
            },
        )
        return {
            "session_id": session_id,
            "npc_id": npc.id,
            "scene": body.scene,
            "track": track.value,
            "strategies": strategy_names,
        }

    @app.post("/v1/sessions/{session_id}/turns")
    def post_turn(session_id: str, body: TurnBody) -> Any:
        entry = sessions.get(session_id)
        if entry is None:
            return _error(404, "unknown_session", f"no session {session_id!r}")
        if not body.player_text.strip():
            return _error(400, "empty_player_text", "player_text must not be blank")
        if not entry.lock.acquire(blocking=False):
            return _error(409, "turn_in_flight", "another turn is already running")
        try:
            try:
                session, outcome = run_turn(entry.session, body.player_text, entry.config)
            except TurnFailed as exc:
                cause = exc.cause
                if isinstance(cause, Timeout):
                    return _error(504, "turn_timeout", str(cause))
                if isinstance(cause, BudgetExceeded):
                    return _error(400, "budget_exceeded", str(cause))
                if isinstance(cause, TransportError):
                    return _error(502, "backend_error", str(cause))
                return _error(500, "turn_failed", str(cause))
            except ValueError as exc:
                return _error(400, "bad_request", str(exc))
            entry.session = session
            entry.outcomes.append(outcome)
            payload = _turn_payload(entry, outcome)
            _persist(entry, {"type": "turn", **payload})
            return payload
        finally:
            entry.lock.release()

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> Any:
        entry = sessions.get(session_id)
        if entry is None:
            return _error(404, "unknown_session", f"no session {session_id!r}")
        return entry.session.to_dict()

    if settings.static_dir:
        app.mount("/", StaticFiles(directory=settings.static_dir, html=True), name="static")

    return app


def serve(settings: ServiceSettings, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(settings), host=host, port=port, log_level="warning")
