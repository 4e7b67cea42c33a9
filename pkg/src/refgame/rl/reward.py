"""Episode reward: outcome payoff plus a per-description penalty."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class RewardParams:
    r_success: float = 1.0
    r_failure: float = -0.8
    r_term: float = -0.025
    gamma: float = 0.95

    def __post_init__(self) -> None:
        if self.r_term > 0:
            raise ValueError("the term penalty must be non-positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0,1]")


DEFAULT_REWARD = RewardParams()


def reward(outcome: str | None, term_count: int, params: RewardParams = DEFAULT_REWARD) -> float:
    """Terminal reward r_outcome + r_term * term_count; zero before the end
    of the episode (no intermediate shaping)."""
    if term_count < 0:
        raise ValueError("term_count must be non-negative")
    if outcome is None:
        return 0.0
    if outcome == "success":
        base = params.r_success
    elif outcome == "failure":
        base = params.r_failure
    else:
        raise ValueError(f"unknown outcome {outcome!r}")
    return base + params.r_term * term_count
