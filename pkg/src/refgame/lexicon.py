"""Color-description model: term applicability, conservative speaker and
literal listener distributions over a hand-specified Gaussian-category lexicon.

Applicability of a term to a color is a separable Gaussian bump in Lab space;
the speaker prefers terms true of the target and false of the distractors,
the listener redistributes a term's applicability over the three patches.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from functools import lru_cache

import numpy as np

from .colors import Color, ColorContext


@dataclass(frozen=True)
class Term:
    id: str
    label: str
    center: tuple[float, float, float]
    spread: tuple[float, float, float]

    def __post_init__(self) -> None:
        if any(s <= 0 for s in self.spread):
            raise ValueError(f"term {self.id!r} has a non-positive spread")


@dataclass(frozen=True)
class Lexicon:
    terms: tuple[Term, ...]

    def __post_init__(self) -> None:
        if not self.terms:
            raise ValueError("lexicon must be non-empty")
        ids = [t.id for t in self.terms]
        labels = [t.label for t in self.terms]
        if len(set(ids)) != len(ids):
            raise ValueError("term ids must be unique")
        if len(set(labels)) != len(labels):
            raise ValueError("term labels must be unique")

    def __len__(self) -> int:
        return len(self.terms)

    def by_id(self, term_id: str) -> Term:
        try:
            return self._id_index()[term_id]
        except KeyError:
            raise KeyError(f"unknown term id {term_id!r}") from None

    def by_label(self, label: str) -> Term | None:
        return self._label_index().get(label)

    def labels(self) -> list[str]:
        return [t.label for t in self.terms]

    @lru_cache(maxsize=None)
    def _id_index(self) -> dict[str, Term]:
        return {t.id: t for t in self.terms}

    @lru_cache(maxsize=None)
    def _label_index(self) -> dict[str, Term]:
        return {t.label: t for t in self.terms}

    @lru_cache(maxsize=None)
    def _centers_spreads(self) -> tuple[np.ndarray, np.ndarray]:
        centers = np.array([t.center for t in self.terms])
        spreads = np.array([t.spread for t in self.terms])
        return centers, spreads


def applicability(term: Term, color: Color) -> float:
    """Degree in [0,1] to which the term describes the color."""
    z = 0.0
    for c, mu, s in zip(color.lab, term.center, term.spread):
        d = (c - mu) / s
        z += d * d
    return float(np.exp(-0.5 * z))


def applicability_matrix(lexicon: Lexicon, context: ColorContext) -> np.ndarray:
    """(n_terms, 3) applicabilities of every term to every patch."""
    return _cached_matrix(lexicon, context)


@lru_cache(maxsize=4096)
def _cached_matrix(lexicon: Lexicon, context: ColorContext) -> np.ndarray:
    centers, spreads = lexicon._centers_spreads()
    labs = np.array([p.lab for p in context.patches])  # (3, 3)
    z = (labs[None, :, :] - centers[:, None, :]) / spreads[:, None, :]
    out = np.exp(-0.5 * np.sum(z * z, axis=2))
    out.setflags(write=False)
    return out


def speaker_scores(
    target_index: int, context: ColorContext, lexicon: Lexicon
) -> np.ndarray:
    """Unnormalized conservative-speaker scores for every term."""
    apps = applicability_matrix(lexicon, context)
    score = apps[:, target_index].copy()
    for d in range(3):
        if d != target_index:
            score *= 1.0 - apps[:, d]
    return score


def speaker(
    target: Color, context: ColorContext, lexicon: Lexicon
) -> dict[str, float]:
    """P(term | target, context): applicability to the target times the
    product of complements over the distractors; uniform when all scores
    vanish."""
    try:
        target_index = context.patches.index(target)
    except ValueError:
        raise ValueError("target must be one of the context patches") from None
    score = speaker_scores(target_index, context, lexicon)
    total = float(score.sum())
    if total <= 0.0:
        p = np.full(len(lexicon), 1.0 / len(lexicon))
    else:
        p = score / total
    return {t.id: float(v) for t, v in zip(lexicon.terms, p)}


def listener(
    term: Term, context: ColorContext, negated: bool = False
) -> tuple[float, float, float]:
    """P(patch | term): applicability renormalized over the three patches,
    or its complement when the term is negated; uniform fallback on zero
    mass."""
    apps = [applicability(term, p) for p in context.patches]
    if negated:
        apps = [1.0 - a for a in apps]
    total = sum(apps)
    if total <= 0.0:
        return (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    return (apps[0] / total, apps[1] / total, apps[2] / total)


def best_term(
    scores: np.ndarray, lexicon: Lexicon, exclude: frozenset[str] | set[str] = frozenset()
) -> Term:
    """Highest-scoring term outside ``exclude``; falls back to the overall
    argmax when every term is excluded."""
    order = np.argsort(-scores, kind="stable")
    for i in order:
        term = lexicon.terms[int(i)]
        if term.id not in exclude:
            return term
    return lexicon.terms[int(order[0])]


def lexicon_to_json(lexicon: Lexicon) -> list[dict]:
    return [
        {
            "id": t.id,
            "label": t.label,
            "center": list(t.center),
            "spread": list(t.spread),
        }
        for t in lexicon.terms
    ]


def lexicon_from_json(entries: list[dict]) -> Lexicon:
    terms = tuple(
        Term(
            id=e["id"],
            label=e["label"],
            center=tuple(float(v) for v in e["center"]),
            spread=tuple(float(v) for v in e["spread"]),
        )
        for e in entries
    )
    return Lexicon(terms=terms)


def load_lexicon(path=None) -> Lexicon:
    """Load a lexicon file; defaults to the bundled one."""
    if path is None:
        data = resources.files("refgame.assets").joinpath("lexicon.json").read_text()
    else:
        with open(path) as fh:
            data = fh.read()
    return lexicon_from_json(json.loads(data))
