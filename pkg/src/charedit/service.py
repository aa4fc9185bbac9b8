"""HTTP/JSON API over the session engine.

Endpoints (JSON bodies, uniform {code, message, detail} error envelope):

    POST /sessions                    {seed?, initial_text?} -> session state
    POST /sessions/{id}/message       {text} -> feedback + fresh state
    POST /sessions/{id}/undo          -> fresh state
    GET  /sessions/{id}/parameters    -> values + preview + version
    GET  /sessions/{id}/memory        -> attribute memory bank
    GET  /sessions/{id}/history       -> round summaries
    GET  /schema                      -> parameter schema document
    GET  /healthz                     -> ok + artifact versions

Different sessions are served concurrently; turns within one session are
serialized by a per-session lock.  Every mutation response carries the
fresh state (parameters version, preview, memory), so clients never poll.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import __version__
from .bundle import ModelStack
from .semantic import render_preview
from .session import (
    NothingToUndoError,
    Session,
    SessionStore,
    handle_turn,
    start_session,
    undo,
)
from .solver import SolveConfig


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: dict | None = None):
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail or {}


class CreateSessionBody(BaseModel):
    seed: int = 0
    initial_text: str | None = None


class MessageBody(BaseModel):
    text: str = Field(min_length=1)


class SessionRegistry:
    """In-memory session table with per-session locks."""

    def __init__(self, stack: ModelStack, solve_config: SolveConfig | None = None,
                 store: SessionStore | None = None, backend=None):
        self.stack = stack
        self.solve_config = solve_config or SolveConfig()
        self.store = store
        self.backend = backend
        self.sessions: dict[str, Session] = {}
        self.locks: dict[str, threading.Lock] = {}
        self._table_lock = threading.Lock()

    def create(self, seed: int, initial_text: str | None) -> Session:
        session = start_session(
            self.stack, self.solve_config, seed=seed, initial_text=initial_text,
            backend=self.backend, store=self.store,
        )
        with self._table_lock:
            self.sessions[session.id] = session
            self.locks[session.id] = threading.Lock()
        return session

    def get(self, session_id: str) -> tuple[Session, threading.Lock]:
        with self._table_lock:
            session = self.sessions.get(session_id)
            if session is None:
                raise ApiError(404, "session_not_found", f"no session {session_id!r}")
            return session, self.locks[session_id]


def _parameters_payload(session: Session) -> dict:
    preview = render_preview(session.current_x, session.stack.renderer)
    return {
        "values": session.current_x.tolist(),
        "schema_hash": session.stack.schema_hash,
        "parameters_version": session.parameters_version,
        "preview": preview.to_dict(),
    }


def _memory_payload(session: Session) -> dict:
    return {
        "round_counter": session.bank.round_counter,
        "attributes": [
            {
                "attribute": key,
                "prompt": st.prompt,
                "strength": st.strength,
                "last_round": st.last_round,
            }
            for key, st in sorted(session.bank.entries.items())
        ],
    }


def _session_state(session: Session, feedback: str | None = None, failed: bool = False) -> dict:
    state = {
        "session_id": session.id,
        "rounds": len(session.rounds),
        "parameters_version": session.parameters_version,
        "parameters": _parameters_payload(session),
        "memory": _memory_payload(session),
    }
    if feedback is not None:
        state["feedback"] = feedback
        state["failed"] = failed
    return state


def create_app(
    stack: ModelStack,
    solve_config: SolveConfig | None = None,
    store: SessionStore | None = None,
    backend=None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="charedit", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    registry = SessionRegistry(stack, solve_config, store, backend)
    app.state.registry = registry

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"code": "invalid_request", "message": "request body failed validation",
                     "detail": {"errors": exc.errors()}},
        )

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "versions": {
                "charedit": __version__,
                "schema_hash": registry.stack.schema_hash,
                "role_name": registry.stack.schema.role_name,
            },
        }

    @app.get("/schema")
    def get_schema():
        return registry.stack.schema.to_dict()

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        session = registry.create(body.seed, body.initial_text)
        return _session_state(
            session,
            feedback=session.rounds[-1].feedback if session.rounds else None,
            failed=session.rounds[-1].failed if session.rounds else False,
        )

    @app.post("/sessions/{session_id}/message")
    def post_message(session_id: str, body: MessageBody):
        session, lock = registry.get(session_id)
        with lock:
            record = handle_turn(session, body.text)
            return _session_state(session, feedback=record.feedback, failed=record.failed)

    @app.post("/sessions/{session_id}/undo")
    def post_undo(session_id: str):
        session, lock = registry.get(session_id)
        with lock:
            try:
                record = undo(session)
            except NothingToUndoError:
                raise ApiError(409, "nothing_to_undo", "no completed round to undo")
            return _session_state(session, feedback=f"Undid round {record.index}.")

    @app.get("/sessions/{session_id}/parameters")
    def get_parameters(session_id: str):
        session, lock = registry.get(session_id)
        with lock:
            return _parameters_payload(session)

    @app.get("/sessions/{session_id}/memory")
    def get_memory(session_id: str):
        session, lock = registry.get(session_id)
        with lock:
            return _memory_payload(session)

    @app.get("/sessions/{session_id}/history")
    def get_history(session_id: str):
        session, lock = registry.get(session_id)
        with lock:
            return {"session_id": session.id, "rounds": [r.summary() for r in session.rounds]}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
