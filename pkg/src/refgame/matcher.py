"""Simulated matchers: the always-selecting and the clarifying profile, plus
the two noise operators that make them humanlike.

Semantic noise perturbs each utterance factor with a Dirichlet draw whose
concentration is alpha times the factor (mean-preserving); selection noise
passes the posterior through a temperature softmax right before the pick.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dialogue import ActionFlag, DialogueState, product_posterior
from .lexicon import Lexicon, applicability_matrix
from .logic import LogicalForm, clarify_term

_SHAPE_GUARD = 1e-6  # keeps Gamma shapes positive when a factor entry is 0

# Concentration response curve: Gamma shapes are concentration(alpha) * p
# with concentration = REFERENCE_CONCENTRATION * (alpha/REFERENCE_ALPHA)**
# CONCENTRATION_POWER. A bare alpha*p concentration sits in the sparse
# regime across the whole working alpha range (argmax rates then depend only
# on p, never on alpha), which would flatten the alpha sweep entirely; this
# curve places alpha=0.15 in the mildly-noisy regime and alpha<=0.05 in the
# severe one, matching the reported sweep behavior.
REFERENCE_ALPHA = 0.15
REFERENCE_CONCENTRATION = 32.0
CONCENTRATION_POWER = 1.5


def _concentration(alpha: float) -> float:
    return REFERENCE_CONCENTRATION * (alpha / REFERENCE_ALPHA) ** CONCENTRATION_POWER


class MatcherKind(str, Enum):
    ALWAYS_SELECT = "always_select"
    CLARIFYING = "clarifying"


@dataclass(frozen=True)
class MatcherProfile:
    kind: MatcherKind = MatcherKind.ALWAYS_SELECT
    select_threshold: float = 0.95
    clar_error_rate: float = 0.10
    max_clarifications: int = 2
    tau: float | None = 4.5
    alpha: float | None = 0.15

    def __post_init__(self) -> None:
        if not 0.0 <= self.select_threshold <= 1.0:
            raise ValueError("select_threshold must lie in [0,1]")
        if not 0.0 <= self.clar_error_rate <= 1.0:
            raise ValueError("clar_error_rate must lie in [0,1]")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @classmethod
    def always_select(cls, **kwargs) -> "MatcherProfile":
        return cls(kind=MatcherKind.ALWAYS_SELECT, **kwargs)

    @classmethod
    def clarifying(cls, **kwargs) -> "MatcherProfile":
        return cls(kind=MatcherKind.CLARIFYING, **kwargs)

    @classmethod
    def noiseless(cls, kind: MatcherKind = MatcherKind.ALWAYS_SELECT, **kwargs) -> "MatcherProfile":
        return cls(kind=kind, tau=None, alpha=None, **kwargs)


class MatcherActionKind(str, Enum):
    SELECT = "select"
    CLARIFY = "clarify"


@dataclass(frozen=True)
class MatcherAction:
    kind: MatcherActionKind
    patch: int | None = None
    lf: LogicalForm | None = None

    def __post_init__(self) -> None:
        if self.kind is MatcherActionKind.SELECT and self.patch not in (0, 1, 2):
            raise ValueError("select needs a patch index in {0,1,2}")
        if self.kind is MatcherActionKind.CLARIFY and self.lf is None:
            raise ValueError("clarify needs a logical form")


class MatcherError(RuntimeError):
    pass


def gamma_perturb(
    p: tuple[float, float, float], alpha: float, rng: np.random.Generator
) -> tuple[float, float, float]:
    """Mean-preserving Dirichlet perturbation via independent Gamma draws
    with shapes proportional to alpha's concentration curve times p; spread
    grows as alpha shrinks."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    shapes = np.asarray(p, dtype=float) * _concentration(alpha) + _SHAPE_GUARD
    y = rng.gamma(shapes)
    total = float(y.sum())
    if total <= 0.0:
        return (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    return (float(y[0] / total), float(y[1] / total), float(y[2] / total))


def noisy_finger(
    p: tuple[float, float, float], tau: float
) -> tuple[float, float, float]:
    """Softmax of the temperature-scaled probability vector (note: applied to
    the probabilities themselves, not their logs)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    m = max(p)
    exps = [math.exp(tau * (v - m)) for v in p]
    total = sum(exps)
    return (exps[0] / total, exps[1] / total, exps[2] / total)


def perceived_posterior(
    state: DialogueState, profile: MatcherProfile, rng: np.random.Generator
) -> tuple[float, float, float]:
    """The matcher's own posterior: every grounding factor is perturbed
    independently before the product (semantic noise enters per utterance,
    not once at the end)."""
    factors = state.graph.factors()
    if profile.alpha is not None:
        factors = [gamma_perturb(f, profile.alpha, rng) for f in factors]
    return product_posterior(factors)


def _select(
    p_sem: tuple[float, float, float], profile: MatcherProfile, rng: np.random.Generator
) -> MatcherAction:
    if profile.tau is None:
        idx = int(np.argmax(p_sem))
    else:
        p_tau = noisy_finger(p_sem, profile.tau)
        idx = int(rng.choice(3, p=np.asarray(p_tau) / sum(p_tau)))
    return MatcherAction(kind=MatcherActionKind.SELECT, patch=idx)


# clarifying terms weigh listener discrimination like the director's own
# description choice, so questions stay informative about the top-2 contest
_CLARIFICATION_WEIGHT = 2.0


def _clarification_term(
    p_sem: tuple[float, float, float],
    state: DialogueState,
    lexicon: Lexicon,
    rng: np.random.Generator,
    error: bool,
) -> str:
    if error:
        return lexicon.terms[int(rng.integers(len(lexicon)))].id
    order = np.argsort(p_sem)
    top, second = int(order[2]), int(order[1])
    apps = applicability_matrix(lexicon, state.context)
    mass = apps[:, top] / np.maximum(apps.sum(axis=1), 1e-300)
    score = apps[:, top] * (1.0 - apps[:, second]) * mass**_CLARIFICATION_WEIGHT
    return lexicon.terms[int(np.argmax(score))].id


def matcher_step(
    profile: MatcherProfile,
    state: DialogueState,
    lexicon: Lexicon,
    rng: np.random.Generator,
) -> MatcherAction:
    """One matcher decision after the director ended its turn: select, or ask
    about the term separating the two most likely patches."""
    if not state.has_flag(ActionFlag.END_TURN):
        raise MatcherError("matcher cannot act before the director ends its turn")
    p_sem = perceived_posterior(state, profile, rng)
    budget_spent = state.clarification_count() >= profile.max_clarifications
    if (
        profile.kind is MatcherKind.ALWAYS_SELECT
        or max(p_sem) >= profile.select_threshold
        or budget_spent
    ):
        return _select(p_sem, profile, rng)
    error = bool(rng.random() < profile.clar_error_rate)
    term_id = _clarification_term(p_sem, state, lexicon, rng, error)
    return MatcherAction(
        kind=MatcherActionKind.CLARIFY, lf=clarify_term(term_id)
    )


class CalibrationError(RuntimeError):
    pass


def calibrate_threshold(
    profile: MatcherProfile,
    contexts,
    lexicon: Lexicon,
    target_rate: float = 0.03,
    seed: int = 0,
    tolerance: float = 0.01,
) -> float:
    """Bisect the select threshold so the clarification rate under the direct
    baseline matches the target within the tolerance.

    The first matcher decision is threshold-independent, so each context is
    simulated once and its perceived max-posterior is reused across the
    bisection.
    """
    from .policies import PolicyKind, run_director_turn  # local: avoids cycle

    contexts = list(contexts)
    if len(contexts) < 1000:
        raise ValueError("calibration needs at least 1000 contexts")
    maxima = []
    root = np.random.default_rng(seed)
    seeds = root.spawn(len(contexts))
    for ctx, ctx_rng in zip(contexts, seeds):
        state = DialogueState.initial(ctx)
        state, _ = run_director_turn(PolicyKind.DIRECT, state, lexicon)
        p_sem = perceived_posterior(state, profile, ctx_rng)
        maxima.append(max(p_sem))
    maxima = np.asarray(maxima)

    def rate(threshold: float) -> float:
        return float(np.mean(maxima < threshold))

    if rate(1.0) + tolerance < target_rate:
        raise CalibrationError(
            f"target clarification rate {target_rate} unreachable in [0,1]; "
            f"maximum achievable is {rate(1.0):.4f}"
        )
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2.0
        if rate(mid) < target_rate:
            lo = mid
        else:
            hi = mid
    threshold = hi if abs(rate(hi) - target_rate) <= abs(rate(lo) - target_rate) else lo
    if abs(rate(threshold) - target_rate) > tolerance:
        raise CalibrationError(
            f"no threshold reaches rate {target_rate} +/- {tolerance}; "
            f"closest achieved {rate(threshold):.4f} at {threshold:.4f}"
        )
    return float(threshold)
