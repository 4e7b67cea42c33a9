"""Coherence graph of dialogue contributions and the chained referent
posterior.

Each grounding-bearing contribution carries a listener distribution over the
three patches; the posterior is the normalized product of those factors along
the attachment chain, with a uniform prior. States are immutable values:
attach returns a new state.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum, IntEnum

from .colors import ColorContext
from .lexicon import Lexicon, listener
from .logic import (
    ANSWER_ACTS,
    CLARIFICATION_ACTS,
    Act,
    LogicalForm,
)

UNIFORM = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)


class Speaker(str, Enum):
    DIRECTOR = "director"
    MATCHER = "matcher"


class Relation(str, Enum):
    ELABORATION = "elaboration"
    CONTRAST = "contrast"
    QUESTION_ANSWER_PAIR = "question_answer_pair"
    ACKNOWLEDGE = "acknowledge"


class ActionFlag(IntEnum):
    """Bit positions of the action-occurrence record (6 director actions
    plus the matcher's select/clarify)."""

    DESCRIBE_TARGET = 0
    NEGATE_DISTRACTORS = 1
    AFFIRM_CLARIFICATION = 2
    NEGATE_CLOSEST = 3
    NEGATE_CLARIFICATION = 4
    END_TURN = 5
    SELECT = 6
    CLARIFY = 7


class DialogueError(ValueError):
    pass


@dataclass(frozen=True)
class UtteranceNode:
    id: int
    lf: LogicalForm
    speaker: Speaker
    distribution: tuple[float, float, float] | None
    turn_index: int


@dataclass(frozen=True)
class Edge:
    child: int
    parent: int
    relation: Relation


@dataclass(frozen=True)
class CoherenceGraph:
    nodes: tuple[UtteranceNode, ...] = ()
    edges: tuple[Edge, ...] = ()

    def last_node(self) -> UtteranceNode | None:
        return self.nodes[-1] if self.nodes else None

    def last_director_node(self) -> UtteranceNode | None:
        for node in reversed(self.nodes):
            if node.speaker is Speaker.DIRECTOR:
                return node
        return None

    def factors(self) -> list[tuple[float, float, float]]:
        return [n.distribution for n in self.nodes if n.distribution is not None]


def product_posterior(
    factors: list[tuple[float, float, float]]
) -> tuple[float, float, float]:
    """Normalized elementwise product over a uniform prior; uniform when the
    product carries no mass."""
    p = [1.0, 1.0, 1.0]
    for f in factors:
        p = [a * b for a, b in zip(p, f)]
    total = sum(p)
    if total <= 0.0:
        return UNIFORM
    return (p[0] / total, p[1] / total, p[2] / total)


@dataclass(frozen=True)
class DialogueState:
    context: ColorContext
    graph: CoherenceGraph = CoherenceGraph()
    posterior: tuple[float, float, float] = UNIFORM
    term_count: int = 0
    l_conv: int = 0
    pt: Speaker = Speaker.DIRECTOR
    pending_clarification: LogicalForm | None = None
    action_history: int = 0

    @classmethod
    def initial(cls, context: ColorContext) -> "DialogueState":
        return cls(context=context)

    def has_flag(self, flag: ActionFlag) -> bool:
        return bool(self.action_history >> flag & 1)

    def with_flag(self, flag: ActionFlag) -> "DialogueState":
        return replace(self, action_history=self.action_history | (1 << flag))

    @property
    def closed(self) -> bool:
        return self.has_flag(ActionFlag.SELECT)

    def pending_clarification_node(self) -> UtteranceNode | None:
        if self.pending_clarification is None:
            return None
        for node in reversed(self.graph.nodes):
            if node.lf == self.pending_clarification and node.speaker is Speaker.MATCHER:
                return node
        return None

    def clarification_count(self) -> int:
        return sum(1 for n in self.graph.nodes if n.lf.act in CLARIFICATION_ACTS)

    def turn_action_count(self) -> int:
        """Director contributions since the matcher last spoke."""
        count = 0
        for node in reversed(self.graph.nodes):
            if node.speaker is not Speaker.DIRECTOR:
                break
            count += 1
        return count

    def used_term_ids(self) -> frozenset[str]:
        used = set()
        for node in self.graph.nodes:
            if node.speaker is Speaker.DIRECTOR:
                used.update(node.lf.terms)
        return frozenset(used)


_FLAG_BY_ACT = {
    Act.DESCRIBE: ActionFlag.DESCRIBE_TARGET,
    Act.AFFIRM_TERM: ActionFlag.AFFIRM_CLARIFICATION,
    Act.NEGATE_TERM: ActionFlag.NEGATE_CLARIFICATION,
    Act.CLARIFY_TERM: ActionFlag.CLARIFY,
    Act.CLARIFY_PATCH: ActionFlag.CLARIFY,
    Act.SELECT: ActionFlag.SELECT,
}


def grounding_distribution(
    lf: LogicalForm, context: ColorContext, lexicon: Lexicon
) -> tuple[float, float, float] | None:
    """Listener distribution contributed by a logical form, or None for
    non-grounding acts (clarifications, select, end turn)."""
    if lf.act in (Act.DESCRIBE, Act.AFFIRM_TERM):
        negated = False
    elif lf.act in (Act.NEGATE_DESCRIPTION, Act.NEGATE_TERM):
        negated = True
    else:
        return None
    factors = [
        listener(lexicon.by_id(tid), context, negated=negated) for tid in lf.terms
    ]
    return product_posterior(factors)


def attach(
    state: DialogueState, lf: LogicalForm, speaker: Speaker, lexicon: Lexicon
) -> DialogueState:
    """Append a contribution, choose its attachment relation, recompute the
    posterior and the bookkeeping counters."""
    if state.closed:
        raise DialogueError("cannot attach after a selection")
    if lf.act is Act.END_TURN:
        raise DialogueError("end_turn is not an utterance; nothing to attach")
    if lf.act in ANSWER_ACTS and state.pending_clarification is None:
        raise DialogueError(f"{lf.act.value} requires a pending clarification")
    if lf.act in CLARIFICATION_ACTS and speaker is not Speaker.MATCHER:
        raise DialogueError("only the matcher asks clarifications")

    last = state.graph.last_node()
    if last is None:
        turn_index = 0
    else:
        turn_index = last.turn_index + (1 if last.speaker is not speaker else 0)
    node = UtteranceNode(
        id=len(state.graph.nodes),
        lf=lf,
        speaker=speaker,
        distribution=grounding_distribution(lf, state.context, lexicon),
        turn_index=turn_index,
    )

    edges = state.graph.edges
    pending = state.pending_clarification
    if lf.act in ANSWER_ACTS:
        parent = state.pending_clarification_node()
        edges += (Edge(node.id, parent.id, Relation.QUESTION_ANSWER_PAIR),)
        pending = None
    elif lf.act in CLARIFICATION_ACTS:
        if last is not None:
            edges += (Edge(node.id, last.id, Relation.QUESTION_ANSWER_PAIR),)
        pending = lf
    elif lf.act is Act.SELECT:
        if last is not None:
            edges += (Edge(node.id, last.id, Relation.ACKNOWLEDGE),)
    else:  # describe / negate_description
        relation = (
            Relation.CONTRAST if lf.act is Act.NEGATE_DESCRIPTION else Relation.ELABORATION
        )
        anchor = state.graph.last_director_node() or last
        if anchor is not None:
            edges += (Edge(node.id, anchor.id, relation),)

    graph = CoherenceGraph(nodes=state.graph.nodes + (node,), edges=edges)
    describing = speaker is Speaker.DIRECTOR and lf.act in (
        Act.DESCRIBE,
        Act.NEGATE_DESCRIPTION,
        Act.AFFIRM_TERM,
        Act.NEGATE_TERM,
    )
    new = replace(
        state,
        graph=graph,
        posterior=product_posterior(graph.factors()),
        term_count=state.term_count + (1 if describing else 0),
        l_conv=len(graph.nodes),
        pt=speaker,
        pending_clarification=pending,
    )
    flag = _FLAG_BY_ACT.get(lf.act)
    if flag is not None:
        new = new.with_flag(flag)
    return new


def posterior(state: DialogueState) -> tuple[float, float, float]:
    """Recompute the referent posterior from scratch off the graph."""
    return product_posterior(state.graph.factors())


def state_to_json(state: DialogueState) -> dict:
    return {
        "graph": {
            "nodes": [
                {
                    "id": n.id,
                    "lf": n.lf.to_json(),
                    "speaker": n.speaker.value,
                    "distribution": list(n.distribution) if n.distribution else None,
                    "turn_index": n.turn_index,
                }
                for n in state.graph.nodes
            ],
            "edges": [
                {"child": e.child, "parent": e.parent, "relation": e.relation.value}
                for e in state.graph.edges
            ],
        },
        "posterior": list(state.posterior),
        "term_count": state.term_count,
        "l_conv": state.l_conv,
        "pt": state.pt.value,
        "pending_clarification": (
            state.pending_clarification.to_json() if state.pending_clarification else None
        ),
        "closed": state.closed,
    }
