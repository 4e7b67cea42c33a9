"""Logical forms: the structured meaning of a single dialogue contribution."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Act(str, Enum):
    DESCRIBE = "describe"
    NEGATE_DESCRIPTION = "negate_description"
    AFFIRM_TERM = "affirm_term"
    NEGATE_TERM = "negate_term"
    CLARIFY_TERM = "clarify_term"
    CLARIFY_PATCH = "clarify_patch"
    SELECT = "select"
    END_TURN = "end_turn"


NEGATIVE_ACTS = frozenset({Act.NEGATE_DESCRIPTION, Act.NEGATE_TERM})
TERM_ACTS = frozenset(
    {Act.DESCRIBE, Act.NEGATE_DESCRIPTION, Act.AFFIRM_TERM, Act.NEGATE_TERM, Act.CLARIFY_TERM}
)
PATCH_ACTS = frozenset({Act.CLARIFY_PATCH, Act.SELECT})
CLARIFICATION_ACTS = frozenset({Act.CLARIFY_TERM, Act.CLARIFY_PATCH})
ANSWER_ACTS = frozenset({Act.AFFIRM_TERM, Act.NEGATE_TERM})


@dataclass(frozen=True)
class LogicalForm:
    act: Act
    terms: tuple[str, ...] = ()
    patch_ref: int | None = None
    polarity: str = field(default="")

    def __post_init__(self) -> None:
        if self.act in TERM_ACTS and not self.terms:
            raise ValueError(f"{self.act.value} requires at least one term")
        if self.act in PATCH_ACTS and self.patch_ref is None:
            raise ValueError(f"{self.act.value} requires a patch reference")
        if self.patch_ref is not None and self.patch_ref not in (0, 1, 2):
            raise ValueError(f"patch_ref must be 0, 1 or 2, got {self.patch_ref}")
        if not self.polarity:
            object.__setattr__(
                self, "polarity", "negative" if self.act in NEGATIVE_ACTS else "positive"
            )

    def to_json(self) -> dict:
        return {
            "act": self.act.value,
            "terms": list(self.terms),
            "patch_ref": self.patch_ref,
            "polarity": self.polarity,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LogicalForm":
        return cls(
            act=Act(obj["act"]),
            terms=tuple(obj.get("terms") or ()),
            patch_ref=obj.get("patch_ref"),
            polarity=obj.get("polarity", ""),
        )


def describe(term_id: str) -> LogicalForm:
    return LogicalForm(Act.DESCRIBE, terms=(term_id,))


def negate_description(term_id: str) -> LogicalForm:
    return LogicalForm(Act.NEGATE_DESCRIPTION, terms=(term_id,))


def affirm_term(term_id: str) -> LogicalForm:
    return LogicalForm(Act.AFFIRM_TERM, terms=(term_id,))


def negate_term(term_id: str) -> LogicalForm:
    return LogicalForm(Act.NEGATE_TERM, terms=(term_id,))


def clarify_term(term_id: str) -> LogicalForm:
    return LogicalForm(Act.CLARIFY_TERM, terms=(term_id,))


def clarify_patch(index: int) -> LogicalForm:
    return LogicalForm(Act.CLARIFY_PATCH, patch_ref=index)


def select(index: int) -> LogicalForm:
    return LogicalForm(Act.SELECT, patch_ref=index)


END_TURN = LogicalForm(Act.END_TURN)
