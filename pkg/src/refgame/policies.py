"""Director action alphabet, the handcrafted baseline policies and the
clarification-answering rule they share.

A director turn is a sequence of basic actions ending in END_TURN: describe
the target, negate a description covering both distractors, negate the
distractor nearest the target, or answer a pending clarification.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .colors import Condition
from .dialogue import ActionFlag, DialogueState, Speaker, attach
from .lexicon import (
    Lexicon,
    applicability_matrix,
    best_term,
    listener,
    speaker_scores,
)
from .logic import (
    Act,
    LogicalForm,
    END_TURN,
    affirm_term,
    describe,
    negate_description,
    negate_term,
)


class DirectorActionKind(IntEnum):
    """Index doubles as the action id in the learner and the flag bit in the
    dialogue action history."""

    DESCRIBE_TARGET = 0
    NEGATE_DISTRACTORS = 1
    AFFIRM_CLARIFICATION = 2
    NEGATE_CLOSEST = 3
    NEGATE_CLARIFICATION = 4
    END_TURN = 5


N_DIRECTOR_ACTIONS = len(DirectorActionKind)

# actions available per turn before the forced end-turn
MAX_ACTIONS_PER_TURN = 4


class PolicyKind(str, Enum):
    DIRECT = "direct"
    EXTENDED = "extended"
    MIXED = "mixed"
    LEARNED = "learned"


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    weights_path: str | None = None

    @classmethod
    def parse(cls, flag: str) -> "PolicySpec":
        """Parse a --policy flag: direct | extended | mixed | dqn:<path>."""
        if flag.startswith("dqn:"):
            return cls(kind=PolicyKind.LEARNED, weights_path=flag[4:])
        return cls(kind=PolicyKind(flag))


class PolicyError(ValueError):
    pass


# How strongly description-term choice weighs the listener's discrimination
# (predicted referent mass) on top of the conservative-speaker score. Zero
# recovers the raw speaker argmax, which picks overly literal terms that a
# Gaussian listener cannot tell apart across similar patches.
PRAGMATIC_WEIGHT = 1.0


def description_scores(
    referent: int, context, lexicon: Lexicon, weight: float = None
) -> np.ndarray:
    """Score terms for describing one patch: conservative-speaker score times
    the listener's mass on that patch raised to the pragmatic weight."""
    if weight is None:
        weight = PRAGMATIC_WEIGHT
    scores = speaker_scores(referent, context, lexicon)
    if weight == 0.0:
        return scores
    apps = applicability_matrix(lexicon, context)
    mass = apps[:, referent] / np.maximum(apps.sum(axis=1), 1e-300)
    return scores * mass**weight


# Truthfulness floor for negated descriptions: how much the term must still
# apply to the distractor it negates, on top of the negation's pull of
# listener mass off that distractor and onto the target. Zero ranks purely
# by the negated listener's effect.
NEGATION_TRUTH_WEIGHT = 0.0


def negation_scores(
    distractor: int, context, lexicon: Lexicon, truth_weight: float = None
) -> np.ndarray:
    """Score terms for negating one distractor by the effect of the negated
    listener: ratio of mass pushed onto the target versus left on the
    distractor, discounted by how truthfully the term fits the distractor."""
    if truth_weight is None:
        truth_weight = NEGATION_TRUTH_WEIGHT
    apps = applicability_matrix(lexicon, context)
    neg = 1.0 - apps
    total = np.maximum(neg.sum(axis=1), 1e-300)
    mass_target = neg[:, context.target_index] / total
    mass_d = neg[:, distractor] / total
    ratio = mass_target / np.maximum(mass_d, 1e-300)
    if truth_weight == 0.0:
        return ratio
    return ratio * apps[:, distractor] ** truth_weight


def legal_actions(state: DialogueState) -> list[DirectorActionKind]:
    """Actions the director may take now. Clarification answers need a
    pending question; a turn that hit the action cap must end."""
    if state.closed:
        return []
    if state.turn_action_count() >= MAX_ACTIONS_PER_TURN:
        return [DirectorActionKind.END_TURN]
    if state.pending_clarification is not None:
        return list(DirectorActionKind)
    return [
        DirectorActionKind.DESCRIBE_TARGET,
        DirectorActionKind.NEGATE_DISTRACTORS,
        DirectorActionKind.NEGATE_CLOSEST,
        DirectorActionKind.END_TURN,
    ]


def _closest_distractor(state: DialogueState) -> int:
    ctx = state.context
    target = ctx.target
    di, dj = ctx.distractor_indices()
    return di if ctx.patches[di].distance(target) <= ctx.patches[dj].distance(target) else dj


# candidate pool size per distractor when pairing negation terms
_NEGATION_POOL = 16


def _negation_pair(
    state: DialogueState, lexicon: Lexicon, di: int, dj: int, used: frozenset[str]
) -> tuple[str, ...]:
    """Negate both distractors: shortlist terms by per-distractor negation
    effect, then pick the pair whose composed negated-listener factor puts
    the most mass on the target (a shared term collapses to one)."""
    ctx = state.context
    apps = applicability_matrix(lexicon, ctx)
    neg = 1.0 - apps
    norm = neg / np.maximum(neg.sum(axis=1, keepdims=True), 1e-300)

    def shortlist(d: int) -> list[int]:
        scores = negation_scores(d, ctx, lexicon)
        order = np.argsort(-scores, kind="stable")
        picks = [int(i) for i in order if lexicon.terms[int(i)].id not in used]
        return picks[:_NEGATION_POOL] or [int(order[0])]

    best: tuple[float, tuple[str, ...]] | None = None
    t = ctx.target_index
    for a in shortlist(di):
        for b in shortlist(dj):
            composed = norm[a] if a == b else norm[a] * norm[b]
            total = composed.sum()
            if total <= 0:
                continue
            mass = composed[t] / total
            ids = (
                (lexicon.terms[a].id,)
                if a == b
                else (lexicon.terms[a].id, lexicon.terms[b].id)
            )
            if best is None or mass > best[0]:
                best = (mass, ids)
    return best[1]


def _pending_term_id(state: DialogueState, lexicon: Lexicon) -> str:
    """Term under discussion for the pending clarification; a patch
    clarification is answered in terms of that patch's best description."""
    pending = state.pending_clarification
    if pending.act is Act.CLARIFY_TERM:
        return pending.terms[0]
    scores = speaker_scores(pending.patch_ref, state.context, lexicon)
    return best_term(scores, lexicon, exclude=state.used_term_ids()).id


def execute_action(
    action: DirectorActionKind, state: DialogueState, lexicon: Lexicon
) -> tuple[LogicalForm, DialogueState]:
    """Realize a basic director action as a logical form and attach it."""
    if state.closed:
        raise PolicyError("episode is over")
    ctx = state.context
    used = state.used_term_ids()

    if action is DirectorActionKind.END_TURN:
        return END_TURN, state.with_flag(ActionFlag.END_TURN)

    if action is DirectorActionKind.DESCRIBE_TARGET:
        scores = description_scores(ctx.target_index, ctx, lexicon)
        term = best_term(scores, lexicon, exclude=used)
        lf = describe(term.id)
        return lf, attach(state, lf, Speaker.DIRECTOR, lexicon)

    if action is DirectorActionKind.NEGATE_DISTRACTORS:
        di, dj = ctx.distractor_indices()
        term_ids = _negation_pair(state, lexicon, di, dj, used)
        lf = LogicalForm(Act.NEGATE_DESCRIPTION, terms=term_ids)
        return lf, attach(state, lf, Speaker.DIRECTOR, lexicon).with_flag(
            ActionFlag.NEGATE_DISTRACTORS
        )

    if action is DirectorActionKind.NEGATE_CLOSEST:
        closest = _closest_distractor(state)
        scores = description_scores(closest, ctx, lexicon)
        term = best_term(scores, lexicon, exclude=used)
        lf = negate_description(term.id)
        return lf, attach(state, lf, Speaker.DIRECTOR, lexicon).with_flag(
            ActionFlag.NEGATE_CLOSEST
        )

    if state.pending_clarification is None:
        raise PolicyError(f"{action.name} requires a pending clarification")

    term_id = _pending_term_id(state, lexicon)
    if action is DirectorActionKind.AFFIRM_CLARIFICATION:
        lf = affirm_term(term_id)
    else:
        lf = negate_term(term_id)
    return lf, attach(state, lf, Speaker.DIRECTOR, lexicon)


def clarification_answer(state: DialogueState, lexicon: Lexicon) -> DirectorActionKind:
    """Truthful answer to the pending clarification: affirm when the positive
    listener favors the target over every distractor."""
    pending = state.pending_clarification
    if pending is None:
        raise PolicyError("no clarification to answer")
    if pending.act is Act.CLARIFY_PATCH:
        return (
            DirectorActionKind.AFFIRM_CLARIFICATION
            if pending.patch_ref == state.context.target_index
            else DirectorActionKind.NEGATE_CLARIFICATION
        )
    term = lexicon.by_id(pending.terms[0])
    masses = listener(term, state.context)
    target = state.context.target_index
    return (
        DirectorActionKind.AFFIRM_CLARIFICATION
        if all(masses[target] >= masses[i] for i in range(3) if i != target)
        else DirectorActionKind.NEGATE_CLARIFICATION
    )


def baseline_turn(
    policy: PolicyKind, state: DialogueState, lexicon: Lexicon
) -> list[DirectorActionKind]:
    """Plan one full director turn for a handcrafted policy."""
    if policy is PolicyKind.LEARNED:
        raise PolicyError("learned policies decide step by step, not by turn plan")
    if state.closed:
        raise PolicyError("not the director's turn: episode is over")

    pending = state.pending_clarification
    if pending is not None:
        if pending.act is Act.CLARIFY_PATCH and pending.patch_ref != state.context.target_index:
            return [DirectorActionKind.NEGATE_CLOSEST, DirectorActionKind.END_TURN]
        return [clarification_answer(state, lexicon), DirectorActionKind.END_TURN]

    extended = [
        DirectorActionKind.DESCRIBE_TARGET,
        DirectorActionKind.NEGATE_DISTRACTORS,
        DirectorActionKind.END_TURN,
    ]
    direct = [DirectorActionKind.DESCRIBE_TARGET, DirectorActionKind.END_TURN]
    if policy is PolicyKind.EXTENDED:
        return extended
    if policy is PolicyKind.DIRECT:
        return direct
    return extended if state.context.condition is Condition.CLOSE else direct


def run_director_turn(
    policy: PolicyKind,
    state: DialogueState,
    lexicon: Lexicon,
) -> tuple[DialogueState, list[tuple[DirectorActionKind, LogicalForm]]]:
    """Execute a whole baseline turn; returns the new state and the emitted
    (action, logical form) pairs including the final end-turn."""
    emitted: list[tuple[DirectorActionKind, LogicalForm]] = []
    for action in baseline_turn(policy, state, lexicon):
        lf, state = execute_action(action, state, lexicon)
        emitted.append((action, lf))
    return state, emitted
