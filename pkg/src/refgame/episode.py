"""Run one full director/matcher dialogue over a task context."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .colors import ColorContext
from .dialogue import DialogueState, Speaker, attach
from .lexicon import Lexicon
from .logic import LogicalForm, select
from .matcher import MatcherAction, MatcherActionKind, MatcherProfile, matcher_step
from .policies import (
    DirectorActionKind,
    PolicyKind,
    baseline_turn,
    execute_action,
    legal_actions,
)
from .rl.reward import DEFAULT_REWARD, RewardParams, reward

DecideFn = Callable[[DialogueState], DirectorActionKind]

MAX_TURNS = 16  # hard stop; unreachable under the clarification budget


@dataclass(frozen=True)
class EpisodeRecord:
    context: ColorContext
    success: bool
    reward: float
    term_count: int
    clarifications: int
    selection: int
    turns: tuple[tuple[DirectorActionKind, ...], ...]
    logical_forms: tuple[LogicalForm, ...]
    final_posterior: tuple[float, float, float]
    final_state: DialogueState = field(repr=False, compare=False, default=None)

    @property
    def outcome(self) -> str:
        return "success" if self.success else "failure"


def _director_turn(
    policy: PolicyKind | DecideFn,
    state: DialogueState,
    lexicon: Lexicon,
) -> tuple[DialogueState, list[DirectorActionKind], list[LogicalForm]]:
    actions: list[DirectorActionKind] = []
    lfs: list[LogicalForm] = []
    if isinstance(policy, PolicyKind):
        plan = baseline_turn(policy, state, lexicon)
        for action in plan:
            lf, state = execute_action(action, state, lexicon)
            actions.append(action)
            lfs.append(lf)
        return state, actions, lfs
    while True:
        action = policy(state)
        if action not in legal_actions(state):
            raise ValueError(f"decide function chose illegal action {action.name}")
        lf, state = execute_action(action, state, lexicon)
        actions.append(action)
        lfs.append(lf)
        if action is DirectorActionKind.END_TURN:
            return state, actions, lfs


def run_episode(
    context: ColorContext,
    policy: PolicyKind | DecideFn,
    profile: MatcherProfile,
    lexicon: Lexicon,
    rng: np.random.Generator,
    reward_params: RewardParams = DEFAULT_REWARD,
) -> EpisodeRecord:
    """Alternate director turns and matcher decisions until a selection."""
    state = DialogueState.initial(context)
    turns: list[tuple[DirectorActionKind, ...]] = []
    lfs: list[LogicalForm] = []
    for _ in range(MAX_TURNS):
        state, actions, turn_lfs = _director_turn(policy, state, lexicon)
        turns.append(tuple(actions))
        lfs.extend(turn_lfs)
        move: MatcherAction = matcher_step(profile, state, lexicon, rng)
        if move.kind is MatcherActionKind.SELECT:
            final_posterior = state.posterior
            state = attach(state, select(move.patch), Speaker.MATCHER, lexicon)
            success = move.patch == context.target_index
            return EpisodeRecord(
                context=context,
                success=success,
                reward=reward(
                    "success" if success else "failure", state.term_count, reward_params
                ),
                term_count=state.term_count,
                clarifications=state.clarification_count(),
                selection=move.patch,
                turns=tuple(turns),
                logical_forms=tuple(lfs),
                final_posterior=final_posterior,
                final_state=state,
            )
        state = attach(state, move.lf, Speaker.MATCHER, lexicon)
        lfs.append(move.lf)
    raise RuntimeError("episode failed to terminate within the turn cap")
