"""HTTP session layer: a human plays matcher against any director policy.

Sessions live in memory with TTL eviction; each request on a session is
serialized by a per-session lock. Open-session responses never expose the
target index or the referent posterior.
"""
from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

import numpy as np

from .colors import Condition, generate_context
from .dialogue import DialogueState, Speaker, attach, state_to_json
from .episode import DecideFn
from .grammar import Grammar, load_grammar, parse, realize
from .lexicon import Lexicon, load_lexicon
from .logic import Act, LogicalForm, select
from .policies import (
    DirectorActionKind,
    PolicyKind,
    PolicySpec,
    baseline_turn,
    execute_action,
    legal_actions,
)
from .rl.dqn import GreedyQDirector
from .rl.network import QNetwork
from .rl.reward import DEFAULT_REWARD, reward

DEFAULT_TTL_SECONDS = 1800.0

EXAMPLE_PHRASINGS = [
    "is it the teal one?",
    "the darker blue?",
    "is it the left one?",
    "i pick the middle one",
]


class CreateSessionRequest(BaseModel):
    condition: str = "close"
    policy: str = "direct"


class MatcherMove(BaseModel):
    utterance: str | None = None
    select: int | None = None


@dataclass
class Session:
    id: str
    state: DialogueState
    policy: PolicyKind | DecideFn
    policy_name: str
    transcript: list[dict] = field(default_factory=list)
    status: str = "awaiting_matcher"
    outcome: dict | None = None
    last_access: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    def __init__(self, ttl: float = DEFAULT_TTL_SECONDS):
        self.ttl = ttl
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def add(self, session: Session) -> None:
        with self._lock:
            self._evict()
            self._sessions[session.id] = session

    def get(self, session_id: str) -> Session:
        with self._lock:
            self._evict()
            session = self._sessions.get(session_id)
            if session is None:
                raise KeyError(session_id)
            session.last_access = time.monotonic()
            return session

    def _evict(self) -> None:
        now = time.monotonic()
        stale = [
            sid
            for sid, s in self._sessions.items()
            if now - s.last_access > self.ttl
        ]
        for sid in stale:
            del self._sessions[sid]

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


def _run_director_turn(session: Session, lexicon: Lexicon, grammar: Grammar) -> None:
    """Execute the session policy's turn, realizing each contribution."""
    state = session.state
    if isinstance(session.policy, PolicyKind):
        plan = baseline_turn(session.policy, state, lexicon)
        for action in plan:
            lf, state = execute_action(action, state, lexicon)
            _append_director(session, lf, lexicon)
    else:
        while True:
            action = session.policy(state)
            if action not in legal_actions(state):
                action = DirectorActionKind.END_TURN
            lf, state = execute_action(action, state, lexicon)
            _append_director(session, lf, lexicon)
            if action is DirectorActionKind.END_TURN:
                break
    session.state = state


def _append_director(session: Session, lf: LogicalForm, lexicon: Lexicon) -> None:
    if lf.act is Act.END_TURN:
        return
    session.transcript.append(
        {"speaker": "director", "text": realize(lf, lexicon), "lf": lf.to_json()}
    )


def create_app(
    lexicon: Lexicon | None = None,
    grammar: Grammar | None = None,
    policy_dir: str | Path | None = None,
    ttl: float = DEFAULT_TTL_SECONDS,
    static_dir: str | Path | None = None,
    rng_seed: int | None = None,
) -> FastAPI:
    lexicon = lexicon or load_lexicon()
    grammar = grammar or load_grammar()
    store = SessionStore(ttl=ttl)
    rng = np.random.default_rng(rng_seed)
    rng_lock = threading.Lock()

    app = FastAPI(title="color reference game")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.store = store

    def resolve_policy(name: str):
        try:
            spec = PolicySpec.parse(name)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"unknown policy {name!r}")
        if spec.kind is not PolicyKind.LEARNED:
            return spec.kind
        path = Path(spec.weights_path)
        if policy_dir is not None and not path.is_absolute():
            path = Path(policy_dir) / path
        if not path.exists():
            raise HTTPException(
                status_code=404, detail=f"weight artifact not found: {path.name}"
            )
        return GreedyQDirector(QNetwork.load(path))

    def session_view(session: Session) -> dict:
        closed = session.status == "closed"
        snapshot = state_to_json(session.state)
        view = {
            "session_id": session.id,
            "status": session.status,
            "policy": session.policy_name,
            "condition": session.state.context.condition.value,
            "patches": [
                {"rgb": list(p.rgb), "hex": p.hex()} for p in session.state.context.patches
            ],
            "transcript": session.transcript,
            "graph": snapshot["graph"],
            "l_conv": snapshot["l_conv"],
            "term_count": snapshot["term_count"],
        }
        if closed:
            view["target"] = session.state.context.target_index
            view["posterior"] = snapshot["posterior"]
            view["outcome"] = session.outcome
        else:
            # the listener distributions on graph nodes are target-agnostic,
            # but strip them anyway so no probability mass leaks mid-game
            for node in view["graph"]["nodes"]:
                node.pop("distribution", None)
        return view

    @app.post("/sessions", status_code=201)
    def create_session(request: CreateSessionRequest) -> dict:
        try:
            condition = Condition(request.condition)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"unknown condition {request.condition!r}")
        policy = resolve_policy(request.policy)
        with rng_lock:
            context = generate_context(condition, rng)
        session = Session(
            id=secrets.token_hex(12),
            state=DialogueState.initial(context),
            policy=policy,
            policy_name=request.policy,
        )
        _run_director_turn(session, lexicon, grammar)
        store.add(session)
        return session_view(session)

    def get_session(session_id: str) -> Session:
        try:
            return store.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="no such session")

    def close_with_selection(session: Session, index: int) -> None:
        if index not in (0, 1, 2):
            raise HTTPException(status_code=422, detail="select index must be 0, 1 or 2")
        state = attach(session.state, select(index), Speaker.MATCHER, lexicon)
        success = index == state.context.target_index
        session.state = state
        session.status = "closed"
        session.outcome = {
            "result": "success" if success else "failure",
            "selected": index,
            "reward": reward(
                "success" if success else "failure", state.term_count, DEFAULT_REWARD
            ),
        }
        session.transcript.append(
            {
                "speaker": "matcher",
                "text": realize(select(index), lexicon),
                "lf": select(index).to_json(),
            }
        )

    @app.post("/sessions/{session_id}/matcher")
    def matcher_move(session_id: str, move: MatcherMove) -> dict:
        session = get_session(session_id)
        with session.lock:
            if session.status != "awaiting_matcher":
                raise HTTPException(status_code=409, detail="not the matcher's turn")
            if move.select is None and not (move.utterance or "").strip():
                raise HTTPException(
                    status_code=422,
                    detail={
                        "message": "send a clarification utterance or a selection",
                        "examples": EXAMPLE_PHRASINGS,
                    },
                )
            if move.select is not None:
                close_with_selection(session, move.select)
                return session_view(session)
            try:
                parses = parse(move.utterance, grammar, lexicon)
            except ValueError:
                parses = []
            if not parses:
                raise HTTPException(
                    status_code=422,
                    detail={
                        "message": "I couldn't parse that",
                        "examples": EXAMPLE_PHRASINGS,
                    },
                )
            lf = parses[0][0]
            if lf.act is Act.SELECT:
                close_with_selection(session, lf.patch_ref)
                return session_view(session)
            if lf.act not in (Act.CLARIFY_TERM, Act.CLARIFY_PATCH):
                raise HTTPException(
                    status_code=422,
                    detail={
                        "message": "the matcher can ask clarifications or pick a patch",
                        "examples": EXAMPLE_PHRASINGS,
                    },
                )
            session.transcript.append(
                {"speaker": "matcher", "text": move.utterance, "lf": lf.to_json()}
            )
            session.state = attach(session.state, lf, Speaker.MATCHER, lexicon)
            _run_director_turn(session, lexicon, grammar)
            return session_view(session)

    @app.get("/sessions/{session_id}")
    def snapshot(session_id: str) -> dict:
        session = get_session(session_id)
        with session.lock:
            return session_view(session)

    @app.get("/lexicon")
    def lexicon_labels() -> dict:
        return {
            "labels": lexicon.labels(),
            "examples": EXAMPLE_PHRASINGS,
            "policies": ["direct", "extended", "mixed"],
            "conditions": [c.value for c in Condition],
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
