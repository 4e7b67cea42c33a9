"""Evaluation harness: paired-seed episode evaluation, parameter sweeps, the
reward-space analysis and the learned-policy grid, with manifest-backed
reproducible outputs.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from .colors import ColorContext, Condition, generate_context
from .dialogue import ActionFlag, DialogueState
from .episode import DecideFn, EpisodeRecord, run_episode
from .lexicon import Lexicon, load_lexicon
from .matcher import MatcherKind, MatcherProfile
from .policies import DirectorActionKind, PolicyKind, PolicySpec
from .rl.dqn import GreedyQDirector
from .rl.network import QNetwork
from .rl.reward import DEFAULT_REWARD, RewardParams


@dataclass(frozen=True)
class ExperimentConfig:
    matcher: str = "always_select"
    select_threshold: float = 0.95
    tau: float | None = 4.5
    alpha: float | None = 0.15
    clar_error_rate: float = 0.10
    max_clarifications: int = 2
    policies: tuple[str, ...] = ("direct", "extended", "mixed")
    train_contexts: int = 5000
    test_contexts: int = 1000
    threshold_grid: tuple[float, ...] = (0.0, 0.5, 0.8, 0.9, 0.95, 0.99)
    tau_grid: tuple[float, ...] = (1.0, 2.0, 4.5, 8.0, 16.0)
    alpha_grid: tuple[float, ...] = (0.03, 0.05, 0.1, 0.15, 0.3)
    r_term_grid_min: float = -0.4
    r_term_grid_max: float = 0.0
    r_term_grid_steps: int = 801
    seed: int = 7
    eval_seed: int = 500

    def profile(self, **overrides) -> MatcherProfile:
        base = dict(
            kind=MatcherKind(self.matcher),
            select_threshold=self.select_threshold,
            tau=self.tau,
            alpha=self.alpha,
            clar_error_rate=self.clar_error_rate,
            max_clarifications=self.max_clarifications,
        )
        base.update(overrides)
        return MatcherProfile(**base)

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("policies", "threshold_grid", "tau_grid", "alpha_grid"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


@dataclass(frozen=True)
class ConditionStats:
    n: int
    success_rate: float
    avg_reward: float
    avg_terms: float


@dataclass(frozen=True)
class EvalResult:
    policy: str
    n_episodes: int
    success_rate: float
    avg_reward: float
    clarification_rate: float
    avg_terms: float
    ci_half_width: float
    per_condition: dict[str, ConditionStats]

    def to_json(self) -> dict:
        out = asdict(self)
        return out


def make_test_contexts(count: int, seed: int) -> list[ColorContext]:
    """Equal thirds per condition (remainder spread in condition order)."""
    rng = np.random.default_rng(seed)
    per = count // 3
    extra = count - per * 3
    out: list[ColorContext] = []
    for i, cond in enumerate(Condition):
        n = per + (1 if i < extra else 0)
        out.extend(generate_context(cond, rng) for _ in range(n))
    return out


def resolve_policy(
    spec: PolicySpec | str, lexicon: Lexicon
) -> PolicyKind | DecideFn:
    if isinstance(spec, str):
        spec = PolicySpec.parse(spec)
    if spec.kind is PolicyKind.LEARNED:
        if not spec.weights_path or not Path(spec.weights_path).exists():
            raise FileNotFoundError(f"weight artifact not found: {spec.weights_path}")
        return GreedyQDirector(QNetwork.load(spec.weights_path))
    return spec.kind


def _policy_id(policy) -> str:
    if isinstance(policy, PolicyKind):
        return policy.value
    if isinstance(policy, GreedyQDirector):
        return "dqn"
    return getattr(policy, "name", "custom")


def run_episodes(
    policy,
    profile: MatcherProfile,
    contexts: list[ColorContext],
    lexicon: Lexicon,
    seed: int,
    reward_params: RewardParams = DEFAULT_REWARD,
) -> list[EpisodeRecord]:
    """One episode per context with per-episode seed streams spawned from the
    root seed, so runs pair across policies and grid points."""
    seeds = np.random.default_rng(seed).spawn(len(contexts))
    return [
        run_episode(ctx, policy, profile, lexicon, rng, reward_params)
        for ctx, rng in zip(contexts, seeds)
    ]


def summarize(policy_id: str, records: list[EpisodeRecord]) -> EvalResult:
    n = len(records)
    successes = sum(r.success for r in records)
    p = successes / n
    per_condition: dict[str, ConditionStats] = {}
    for cond in Condition:
        rs = [r for r in records if r.context.condition is cond]
        if rs:
            per_condition[cond.value] = ConditionStats(
                n=len(rs),
                success_rate=sum(r.success for r in rs) / len(rs),
                avg_reward=sum(r.reward for r in rs) / len(rs),
                avg_terms=sum(r.term_count for r in rs) / len(rs),
            )
    return EvalResult(
        policy=policy_id,
        n_episodes=n,
        success_rate=p,
        avg_reward=sum(r.reward for r in records) / n,
        clarification_rate=sum(r.clarifications > 0 for r in records) / n,
        avg_terms=sum(r.term_count for r in records) / n,
        ci_half_width=1.96 * math.sqrt(max(p * (1 - p), 0.0) / n),
        per_condition=per_condition,
    )


def evaluate(
    policy,
    profile: MatcherProfile,
    contexts: list[ColorContext],
    lexicon: Lexicon,
    seed: int,
    reward_params: RewardParams = DEFAULT_REWARD,
) -> EvalResult:
    records = run_episodes(policy, profile, contexts, lexicon, seed, reward_params)
    return summarize(_policy_id(policy), records)


# ---------------------------------------------------------------------------
# Sweeps

SWEEP_KINDS = ("threshold", "tau", "alpha")


def sweep(
    kind: str,
    grid,
    policies,
    config: ExperimentConfig,
    contexts: list[ColorContext],
    lexicon: Lexicon,
) -> list[dict]:
    """One evaluation per grid point per policy; contexts and episode seeds
    are identical across grid points so curves differ only through the swept
    parameter."""
    if kind not in SWEEP_KINDS:
        raise ValueError(f"unknown sweep kind {kind!r}")
    rows = []
    for value in grid:
        if kind == "threshold":
            profile = config.profile(
                kind=MatcherKind.CLARIFYING, select_threshold=float(value)
            )
        elif kind == "tau":
            profile = config.profile(tau=float(value))
        else:
            profile = config.profile(alpha=float(value))
        for policy_name in policies:
            policy = resolve_policy(policy_name, lexicon)
            result = evaluate(
                policy, profile, contexts, lexicon, seed=config.eval_seed
            )
            rows.append({"kind": kind, "value": float(value), **_flatten(result)})
    return rows


def _flatten(result: EvalResult) -> dict:
    row = {
        "policy": result.policy,
        "n": result.n_episodes,
        "success_rate": result.success_rate,
        "avg_reward": result.avg_reward,
        "clarification_rate": result.clarification_rate,
        "avg_terms": result.avg_terms,
        "ci_half_width": result.ci_half_width,
    }
    for cond, stats in result.per_condition.items():
        row[f"success_{cond}"] = stats.success_rate
        row[f"n_{cond}"] = stats.n
    return row


# ---------------------------------------------------------------------------
# Reward-space analysis

def reward_space_analysis(
    stats: dict[str, tuple[float, float]],
    r_term_grid,
    r_success: float = 1.0,
    r_failure: float = -0.8,
) -> dict:
    """Expected reward per policy across the term-penalty grid from measured
    (success rate, average term count) statistics; reports the interval where
    the mixed policy beats both of the others."""
    rows = []
    dominant: list[float] = []
    for r_term in r_term_grid:
        expected = {
            policy: s * r_success + (1.0 - s) * r_failure + r_term * terms
            for policy, (s, terms) in stats.items()
        }
        for policy, value in expected.items():
            rows.append({"r_term": float(r_term), "policy": policy, "expected_reward": value})
        others = [v for k, v in expected.items() if k != "mixed"]
        if "mixed" in expected and others and expected["mixed"] > max(others):
            dominant.append(float(r_term))
    interval = (min(dominant), max(dominant)) if dominant else None
    return {"rows": rows, "mixed_dominant_interval": interval}


# ---------------------------------------------------------------------------
# Learned-policy grid

def post_description_state(
    context: ColorContext, p_target: float, p_distractor: float
) -> DialogueState | None:
    """State right after one target description with the posterior pinned to
    (target, best distractor, remainder); None when the cell is infeasible."""
    remainder = 1.0 - p_target - p_distractor
    if remainder < -1e-9 or p_distractor < remainder - 1e-9:
        return None
    remainder = max(remainder, 0.0)
    posterior = [0.0, 0.0, 0.0]
    target = context.target_index
    others = [i for i in range(3) if i != target]
    posterior[target] = p_target
    posterior[others[0]] = p_distractor
    posterior[others[1]] = remainder
    return DialogueState(
        context=context,
        posterior=tuple(posterior),
        term_count=1,
        l_conv=1,
        action_history=1 << ActionFlag.DESCRIBE_TARGET,
    )


def policy_grid(
    network: QNetwork,
    context: ColorContext,
    resolution: int = 40,
) -> list[dict]:
    """Greedy action of the learned policy over the (P(target), P(best
    distractor)) simplex after an initial description; infeasible cells carry
    a null action."""
    director = GreedyQDirector(network)
    rows = []
    for p_target in np.linspace(0.0, 1.0, resolution):
        for p_distractor in np.linspace(0.0, 1.0, resolution):
            state = post_description_state(context, float(p_target), float(p_distractor))
            action = director(state).name if state is not None else None
            rows.append(
                {
                    "p_target": float(p_target),
                    "p_distractor": float(p_distractor),
                    "action": action,
                }
            )
    return rows


def fit_end_turn_threshold(rows: list[dict]) -> tuple[float, float]:
    """Step-function fit on P(target): the threshold above which the policy
    ends its turn, plus the fraction of feasible cells the step explains."""
    feasible = [r for r in rows if r["action"] is not None]
    if not feasible:
        raise ValueError("no feasible cells")
    points = sorted({r["p_target"] for r in feasible})
    best_theta, best_acc = points[0], -1.0
    candidates = [0.0] + [p + 1e-9 for p in points]
    for theta in candidates:
        correct = sum(
            (r["p_target"] >= theta) == (r["action"] == DirectorActionKind.END_TURN.name)
            for r in feasible
        )
        acc = correct / len(feasible)
        if acc > best_acc:
            best_acc, best_theta = acc, theta
    return best_theta, best_acc


# ---------------------------------------------------------------------------
# Output files

def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, config: ExperimentConfig, outputs: list[str | Path]) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "eval_seed": config.eval_seed,
        "outputs": {
            Path(p).name: file_sha256(p) for p in sorted(outputs, key=lambda p: Path(p).name)
        },
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path
