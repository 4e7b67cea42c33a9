"""Deep Q-learning: temporal-difference objective, training loop and the
dialogue environment the director trains against.

The loop is single-threaded and fully driven by one seeded generator, so a
fixed seed reproduces the weight trajectory bit for bit.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Protocol

import numpy as np

from ..colors import ColorContext
from ..dialogue import DialogueState, Speaker, attach
from ..episode import DecideFn
from ..lexicon import Lexicon
from ..logic import select
from ..matcher import MatcherActionKind, MatcherProfile, matcher_step
from ..policies import DirectorActionKind, N_DIRECTOR_ACTIONS, execute_action, legal_actions
from .encoder import STATE_DIM, encode_state
from .network import Adam, QNetwork
from .replay import ReplayMemory, Transition
from .reward import DEFAULT_REWARD, RewardParams, reward


@dataclass(frozen=True)
class TrainConfig:
    state_dim: int = STATE_DIM
    n_actions: int = N_DIRECTOR_ACTIONS
    hidden: int = 64
    lr: float = 1e-2
    gamma: float = 0.95
    batch_size: int = 64
    replay_capacity: int = 50_000
    min_replay: int = 500
    target_sync: int = 500
    episodes: int = 30_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    seed: int = 0
    divergence_limit: float = 1e3

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Environment(Protocol):
    """Episodic environment over encoded state vectors."""

    def reset(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Start an episode; returns (state, legal-action mask)."""

    def step(
        self, action: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, float, bool]:
        """Apply an action; returns (state, legal mask, reward, done)."""


def td_delta(
    batch: list[Transition],
    policy: QNetwork,
    target: QNetwork,
    params: RewardParams = DEFAULT_REWARD,
) -> np.ndarray:
    """Per-sample difference between the policy net's value of the taken
    action and the bootstrapped target; terminal transitions drop the
    bootstrap term, and the target maximizes over the actions legal in the
    next state."""
    if not batch:
        raise ValueError("batch must be non-empty")
    s = np.stack([t.s for t in batch])
    s_next = np.stack([t.s_next for t in batch])
    actions = np.array([t.a for t in batch])
    rewards = np.array([t.r for t in batch])
    terminal = np.array([t.terminal for t in batch])
    legal = np.stack([t.legal_next for t in batch])
    q_policy = policy.forward(s)
    q_target = target.forward(s_next)
    masked = np.where(legal, q_target, -np.inf)
    best_next = masked.max(axis=1)
    best_next = np.where(terminal, 0.0, best_next)
    taken = q_policy[np.arange(len(batch)), actions]
    return taken - (rewards + params.gamma * best_next)


def train_step(
    memory: ReplayMemory,
    policy: QNetwork,
    target: QNetwork,
    optimizer: Adam,
    config: TrainConfig,
    reward_params: RewardParams,
    rng: np.random.Generator,
) -> float:
    """One minibatch update of mean squared TD error; returns the loss."""
    batch = memory.sample(config.batch_size, rng)
    delta = td_delta(batch, policy, target, reward_params)
    s = np.stack([t.s for t in batch])
    dq = np.zeros((len(batch), policy.n_actions))
    dq[np.arange(len(batch)), [t.a for t in batch]] = 2.0 * delta / len(batch)
    grads = policy.backward(s, dq)
    optimizer.step(policy.parameters(), grads)
    return float(np.mean(delta**2))


@dataclass
class TrainLogRow:
    episode: int
    reward: float
    success: bool
    epsilon: float
    loss: float


@dataclass
class TrainResult:
    network: QNetwork
    log: list[TrainLogRow]
    config: TrainConfig

    def checksum(self) -> str:
        return self.network.checksum()


def _epsilon(config: TrainConfig, episode: int) -> float:
    horizon = max(1, int(config.episodes * config.eps_decay_fraction))
    frac = min(1.0, episode / horizon)
    return config.eps_start + (config.eps_end - config.eps_start) * frac


def train(
    env: Environment,
    config: TrainConfig,
    reward_params: RewardParams = DEFAULT_REWARD,
) -> TrainResult:
    """Episodic DQN with replay memory, epsilon-greedy behavior and a hard
    target-network sync every ``target_sync`` updates. Aborts when the mean
    absolute Q-value exceeds the divergence limit."""
    rng = np.random.default_rng(config.seed)
    policy = QNetwork.initialize(config.state_dim, config.hidden, config.n_actions, rng)
    target = policy.copy()
    optimizer = Adam(lr=config.lr)
    memory = ReplayMemory(config.replay_capacity)
    log: list[TrainLogRow] = []
    updates = 0
    for episode in range(config.episodes):
        eps = _epsilon(config, episode)
        state, legal = env.reset(rng)
        done = False
        episode_reward = 0.0
        last_loss = float("nan")
        while not done:
            legal_idx = np.flatnonzero(legal)
            if rng.random() < eps:
                action = int(legal_idx[rng.integers(len(legal_idx))])
            else:
                q = policy.forward(state)
                masked = np.where(legal, q, -np.inf)
                action = int(np.argmax(masked))
            next_state, next_legal, r, done = env.step(action, rng)
            episode_reward += r
            memory.push(
                Transition(
                    s=state,
                    a=action,
                    r=r,
                    s_next=next_state,
                    terminal=done,
                    legal_next=next_legal.copy(),
                )
            )
            state, legal = next_state, next_legal
            if len(memory) >= config.min_replay:
                last_loss = train_step(
                    memory, policy, target, optimizer, config, reward_params, rng
                )
                updates += 1
                if updates % config.target_sync == 0:
                    target.copy_from(policy)
                    mean_q = float(np.abs(policy.forward(state[None, :])).mean())
                    if mean_q > config.divergence_limit:
                        raise FloatingPointError(
                            f"training diverged: mean |Q| = {mean_q:.1f}"
                        )
        log.append(
            TrainLogRow(
                episode=episode,
                reward=episode_reward,
                success=episode_reward > 0,
                epsilon=eps,
                loss=last_loss,
            )
        )
    return TrainResult(network=policy, log=log, config=config)


class DialogueEnv:
    """Director-decision environment over the task simulator: each step is
    one basic director action; matcher moves are folded into the transition
    after an end-turn."""

    def __init__(
        self,
        contexts: list[ColorContext],
        profile: MatcherProfile,
        lexicon: Lexicon,
        reward_params: RewardParams = DEFAULT_REWARD,
    ):
        if not contexts:
            raise ValueError("need at least one training context")
        self.contexts = contexts
        self.profile = profile
        self.lexicon = lexicon
        self.reward_params = reward_params
        self._cursor = 0
        self._state: DialogueState | None = None
        self.last_success: bool | None = None

    def _legal_mask(self, state: DialogueState) -> np.ndarray:
        mask = np.zeros(N_DIRECTOR_ACTIONS, dtype=bool)
        for action in legal_actions(state):
            mask[action] = True
        return mask

    def reset(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        context = self.contexts[self._cursor % len(self.contexts)]
        self._cursor += 1
        self._state = DialogueState.initial(context)
        self.last_success = None
        return encode_state(self._state), self._legal_mask(self._state)

    def step(
        self, action: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, float, bool]:
        state = self._state
        if state is None:
            raise RuntimeError("step before reset")
        kind = DirectorActionKind(action)
        _, state = execute_action(kind, state, self.lexicon)
        done = False
        r = 0.0
        if kind is DirectorActionKind.END_TURN:
            move = matcher_step(self.profile, state, self.lexicon, rng)
            if move.kind is MatcherActionKind.SELECT:
                success = move.patch == state.context.target_index
                state = attach(state, select(move.patch), Speaker.MATCHER, self.lexicon)
                r = reward(
                    "success" if success else "failure",
                    state.term_count,
                    self.reward_params,
                )
                done = True
                self.last_success = success
            else:
                state = attach(state, move.lf, Speaker.MATCHER, self.lexicon)
        self._state = state
        return encode_state(state), self._legal_mask(state), r, done


class GreedyQDirector:
    """Greedy policy over a trained value network, restricted to the actions
    legal in the current state; usable wherever a decide function fits."""

    def __init__(self, network: QNetwork):
        self.network = network

    def __call__(self, state: DialogueState) -> DirectorActionKind:
        legal = legal_actions(state)
        q = self.network.forward(encode_state(state))
        best = max(legal, key=lambda a: q[a])
        return best


def make_decide_fn(network: QNetwork) -> DecideFn:
    return GreedyQDirector(network)
