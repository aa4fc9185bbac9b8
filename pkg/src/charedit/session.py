"""Session orchestration: the multi-round edit loop, undo, and replay.

One session owns the current parameter state, the attribute memory bank,
and a round-indexed history.  Each turn runs the full pipeline

    parse -> bank update -> per-edit (localize -> masked solve)

and appends an event to the session's append-only log.  Replaying the log
rebuilds the exact parameter state (parsing through a live backend is not
repeatable, so events store the parsed turn; everything downstream is
deterministic), which doubles as the persistence correctness oracle.  A
failed solve rolls the whole turn back; undo reverts the latest completed
round while keeping it in the log flagged as undone.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import solver
from .bundle import ModelStack
from .ipm import MemoryBank, ParsedTurn, apply_turn, parse_turn
from .localizer import localize
from .schema import mix, validate


class SessionError(RuntimeError):
    pass


class NothingToUndoError(SessionError):
    pass


EVENT_LOG_VERSION = 1
SNAPSHOT_EVERY = 10


@dataclass
class RoundRecord:
    index: int
    user_text: str
    parsed: ParsedTurn
    masks: list[list[int]]
    solves: list[dict]  # per-edit loss summaries
    x_after: np.ndarray
    wall_time_ms: float
    feedback: str
    failed: bool = False
    undone: bool = False
    # state before the round, for undo and rollback
    x_before: np.ndarray | None = None
    bank_before: dict | None = None

    def summary(self) -> dict:
        return {
            "index": self.index,
            "user_text": self.user_text,
            "feedback": self.feedback,
            "parser_source": self.parsed.parser_source,
            "edits": [e.to_dict() for e in self.parsed.edits],
            "masks": self.masks,
            "solves": self.solves,
            "wall_time_ms": self.wall_time_ms,
            "failed": self.failed,
            "undone": self.undone,
        }


@dataclass
class Session:
    id: str
    stack: ModelStack
    solve_config: solver.SolveConfig
    seed: int
    bank: MemoryBank = field(default_factory=MemoryBank)
    rounds: list[RoundRecord] = field(default_factory=list)
    current_x: np.ndarray | None = None
    current_z: np.ndarray | None = None
    parameters_version: int = 0
    backend: object | None = None
    events: list[dict] = field(default_factory=list)
    store: "SessionStore | None" = None

    @property
    def history_texts(self) -> list[tuple[str, str]]:
        out = []
        for record in self.rounds:
            out.append(("user", record.user_text))
            out.append(("system", record.feedback))
        return out

    def _emit(self, event: dict) -> None:
        self.events.append(event)
        if self.store is not None:
            self.store.append_event(self.id, event)
            if len(self.events) % SNAPSHOT_EVERY == 0:
                self.store.write_snapshot(self)


def _set_current(session: Session, x: np.ndarray) -> None:
    problems = validate(x, session.stack.schema)
    if problems:
        raise SessionError(f"invalid parameters produced: {problems}")
    changed = session.current_x is None or not np.array_equal(x, session.current_x)
    session.current_x = x
    session.current_z = session.stack.latent.encode(x)
    if changed:
        session.parameters_version += 1


def _solve_summary(attribute: str, strength: float, result: solver.SolveResult) -> dict:
    first, last = result.loss_trace[0], result.loss_trace[-1]
    return {
        "attribute": attribute,
        "strength": strength,
        "strength_weight": result.strength_weight,
        "steps": result.steps_performed,
        "initial_loss": {"clip": first[0], "prior": first[1], "total": first[2]},
        "final_loss": {"clip": last[0], "prior": last[1], "total": last[2]},
    }


def _execute_turn(session: Session, user_text: str, parsed: ParsedTurn, initial: bool) -> RoundRecord:
    """Shared turn pipeline for live handling and log replay.

    Runs bank update and solves, commits or rolls back, and appends the
    round record.  Never parses: the caller supplies the ParsedTurn.
    """
    t0 = time.perf_counter()
    x_before = session.current_x.copy()
    bank_before = session.bank.to_dict()
    new_bank, resolved = apply_turn(parsed, session.bank, session.stack.label_set)
    stack = session.stack

    feedback = parsed.feedback
    failed = False
    masks: list[list[int]] = []
    solves: list[dict] = []
    x = x_before
    try:
        if initial and not resolved:
            # description with no recognizable attribute: one unmasked creation
            result = solver.create(user_text, session.solve_config, stack)
            x = result.x_final
            masks.append(result.edited_channels.astype(int).tolist())
            solves.append(_solve_summary("(whole face)", 1.0, result))
            feedback = f"Created an initial character from: '{user_text}'."
        else:
            for edit in resolved:
                loc = localize(edit.prompt, stack.localizer, stack.schema)
                if loc.unlocalized:
                    feedback += f" (could not localize '{edit.prompt}'; editing all channels)"
                masks.append(loc.mask.astype(int).tolist())
                if initial:
                    candidate = solver.create(edit.prompt, session.solve_config, stack)
                    x = mix(x, candidate.x_final, loc.mask, stack.schema)
                    solves.append(_solve_summary(edit.attribute_key, edit.strength, candidate))
                else:
                    result = solver.edit(x, edit.prompt, edit.strength, loc.mask, session.solve_config, stack)
                    x = result.x_final
                    solves.append(_solve_summary(edit.attribute_key, edit.strength, result))
    except solver.DivergenceError as exc:
        failed = True
        x = x_before
        feedback += f" (solver diverged at step {exc.step}; turn rolled back)"

    if failed:
        session.bank = MemoryBank.from_dict(bank_before)
    else:
        session.bank = new_bank
        _set_current(session, x)

    record = RoundRecord(
        index=len(session.rounds),
        user_text=user_text,
        parsed=parsed,
        masks=masks,
        solves=solves,
        x_after=session.current_x.copy(),
        wall_time_ms=(time.perf_counter() - t0) * 1000.0,
        feedback=feedback,
        failed=failed,
        x_before=x_before,
        bank_before=bank_before,
    )
    session.rounds.append(record)
    return record


def start_session(
    stack: ModelStack,
    solve_config: solver.SolveConfig | None = None,
    seed: int = 0,
    initial_text: str | None = None,
    session_id: str | None = None,
    backend=None,
    store: "SessionStore | None" = None,
) -> Session:
    """Open a session at the prior-mean face, optionally shaped by a first
    description.

    With an initial description, attribute-bearing edits each run a fresh
    whole-face solve folded in through that attribute's mask; a description
    with no recognizable attribute runs one unmasked solve with the full
    text as prompt.
    """
    config = solve_config or solver.SolveConfig()
    session = Session(
        id=session_id or uuid.uuid4().hex[:12],
        stack=stack,
        solve_config=config,
        seed=seed,
        backend=backend,
        store=store,
    )
    session._emit({
        "version": EVENT_LOG_VERSION,
        "type": "session_started",
        "session_id": session.id,
        "seed": seed,
        "schema_hash": stack.schema_hash,
        "solve_config": json.loads(json.dumps(vars(config))),
        "initial_text": initial_text,
    })
    _set_current(session, stack.mean_face())
    if initial_text is not None and initial_text.strip():
        handle_turn(session, initial_text, _is_initial=True)
    return session


def handle_turn(session: Session, user_text: str, _is_initial: bool = False) -> RoundRecord:
    """Parse and execute one dialogue turn, logging it as an event."""
    parsed = parse_turn(
        user_text, session.history_texts, session.bank, session.stack.label_set, session.backend
    )
    record = _execute_turn(session, user_text, parsed, _is_initial)
    session._emit({
        "type": "turn",
        "user_text": user_text,
        "parsed": parsed.to_dict(),
        "initial": _is_initial,
        "failed": record.failed,
        "x_after": session.current_x.tolist(),
    })
    return record


def undo(session: Session) -> RoundRecord:
    """Revert the latest completed round; it stays in the log flagged undone."""
    record = _apply_undo(session)
    session._emit({
        "type": "undo",
        "round_index": record.index,
        "x_after": session.current_x.tolist(),
    })
    return record


def _apply_undo(session: Session) -> RoundRecord:
    target = next((r for r in reversed(session.rounds) if not r.undone), None)
    if target is None:
        raise NothingToUndoError("no completed round to undo")
    target.undone = True
    session.bank = MemoryBank.from_dict(target.bank_before)
    _set_current(session, target.x_before.copy())
    return target


def replay_events(stack: ModelStack, events: list[dict]) -> Session:
    """Rebuild a session from its event log through the same turn pipeline."""
    if not events or events[0].get("type") != "session_started":
        raise SessionError("event log does not start with session_started")
    head = events[0]
    session = Session(
        id=head["session_id"],
        stack=stack,
        solve_config=solver.SolveConfig(**head["solve_config"]),
        seed=head["seed"],
    )
    if head.get("schema_hash") != stack.schema_hash:
        raise SessionError("event log was recorded against a different schema")
    session.events.append(head)
    _set_current(session, stack.mean_face())
    for event in events[1:]:
        if event["type"] == "turn":
            parsed = ParsedTurn.from_dict(event["parsed"])
            _execute_turn(session, event["user_text"], parsed, event.get("initial", False))
            session.events.append(event)
        elif event["type"] == "undo":
            _apply_undo(session)
            session.events.append(event)
        else:
            raise SessionError(f"unknown event type {event['type']!r}")
    return session


class SessionStore:
    """Append-only JSON-lines event log per session plus periodic snapshots."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def events_path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.events.jsonl"

    def snapshot_path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.snapshot.json"

    def append_event(self, session_id: str, event: dict) -> None:
        with open(self.events_path(session_id), "a") as fh:
            fh.write(json.dumps(event) + "\n")

    def write_snapshot(self, session: Session) -> None:
        snapshot = {
            "session_id": session.id,
            "event_count": len(session.events),
            "parameters_version": session.parameters_version,
            "current_x": session.current_x.tolist(),
            "bank": session.bank.to_dict(),
        }
        self.snapshot_path(session.id).write_text(json.dumps(snapshot))

    def load_events(self, session_id: str) -> list[dict]:
        path = self.events_path(session_id)
        if not path.exists():
            raise SessionError(f"no event log for session {session_id!r}")
        return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]

    def load_session(self, session_id: str, stack: ModelStack) -> Session:
        session = replay_events(stack, self.load_events(session_id))
        session.store = self
        return session

    def list_sessions(self) -> list[str]:
        return sorted(p.name.removesuffix(".events.jsonl") for p in self.root.glob("*.events.jsonl"))
