import math

import numpy as np
import pytest

from refgame.colors import Condition, generate_context
from refgame.dialogue import ActionFlag, DialogueState, Speaker, attach
from refgame.lexicon import load_lexicon
from refgame.logic import clarify_term, describe
from refgame.matcher import MatcherProfile
from refgame.policies import DirectorActionKind, execute_action
from refgame.rl.dqn import (
    DialogueEnv,
    GreedyQDirector,
    TrainConfig,
    td_delta,
    train,
    train_step,
)
from refgame.rl.encoder import STATE_DIM, encode_state
from refgame.rl.network import Adam, QNetwork
from refgame.rl.replay import ReplayMemory, Transition
from refgame.rl.reward import DEFAULT_REWARD, RewardParams, reward


@pytest.fixture(scope="module")
def lexicon():
    return load_lexicon()


class TestReward:
    def test_success_with_two_terms(self):
        assert reward("success", 2) == pytest.approx(0.95)

    def test_failure_with_one_term(self):
        assert reward("failure", 1) == pytest.approx(-0.825)

    def test_success_no_terms(self):
        assert reward("success", 0) == pytest.approx(1.0)

    def test_non_terminal_is_zero(self):
        assert reward(None, 3) == 0.0

    def test_bounds(self):
        params = DEFAULT_REWARD
        for outcome in ("success", "failure"):
            for terms in range(6):
                r = reward(outcome, terms, params)
                assert params.r_failure + params.r_term * 6 <= r <= params.r_success

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            reward("draw", 0)
        with pytest.raises(ValueError):
            reward("success", -1)
        with pytest.raises(ValueError):
            RewardParams(r_term=0.1)


class TestEncodeState:
    def test_fresh_state(self, lexicon):
        ctx = generate_context(Condition.FAR, np.random.default_rng(1))
        state = DialogueState.initial(ctx)
        vec = encode_state(state)
        assert vec.shape == (STATE_DIM,)
        assert vec[0:3] == pytest.approx([1 / 3, 1 / 3, 1 / 3])
        assert vec[3] == pytest.approx(1 / 3)
        assert vec[4:12] == pytest.approx(np.zeros(8))
        assert vec[15] == 0.0
        assert vec[16] == 1.0  # director is the opening speaker

    def test_after_describe(self, lexicon):
        ctx = generate_context(Condition.FAR, np.random.default_rng(2))
        state = DialogueState.initial(ctx)
        _, state = execute_action(DirectorActionKind.DESCRIBE_TARGET, state, lexicon)
        vec = encode_state(state)
        assert vec[0:3] == pytest.approx(state.posterior)
        assert vec[3] == pytest.approx(state.posterior[ctx.target_index])
        assert vec[4 + ActionFlag.DESCRIBE_TARGET] == 1.0
        assert vec[15] == pytest.approx(0.1)  # one node, scaled by 1/10

    def test_speaker_flag_is_local(self, lexicon):
        ctx = generate_context(Condition.FAR, np.random.default_rng(3))
        state = DialogueState.initial(ctx)
        _, state = execute_action(DirectorActionKind.DESCRIBE_TARGET, state, lexicon)
        _, ended = execute_action(DirectorActionKind.END_TURN, state, lexicon)
        clarified = attach(ended, clarify_term(lexicon.terms[0].id), Speaker.MATCHER, lexicon)
        answered, _ = None, None
        v1 = encode_state(ended)
        v2 = encode_state(clarified)
        assert v1[16] == 1.0 and v2[16] == 0.0

    def test_distance_features_scaled(self, lexicon):
        from refgame.colors import distance_features

        ctx = generate_context(Condition.SPLIT, np.random.default_rng(4))
        vec = encode_state(DialogueState.initial(ctx))
        feats = distance_features(ctx)
        assert vec[12] == pytest.approx(feats.d_min / 100)
        assert vec[13] == pytest.approx(feats.d_max / 100)
        assert vec[14] == pytest.approx(feats.d_avg / 100)

    def test_distinct_posteriors_distinct_vectors(self, lexicon):
        ctx = generate_context(Condition.CLOSE, np.random.default_rng(5))
        s0 = DialogueState.initial(ctx)
        _, s1 = execute_action(DirectorActionKind.DESCRIBE_TARGET, s0, lexicon)
        assert not np.allclose(encode_state(s0), encode_state(s1))


def make_transition(rng, net, terminal=False, legal=None):
    s = rng.normal(size=net.state_dim)
    s_next = rng.normal(size=net.state_dim)
    if legal is None:
        legal = np.ones(net.n_actions, dtype=bool)
    return Transition(
        s=s,
        a=int(rng.integers(net.n_actions)),
        r=float(rng.normal()),
        s_next=s_next,
        terminal=terminal,
        legal_next=legal,
    )


class TestTdDelta:
    def test_terminal_hand_computation(self):
        rng = np.random.default_rng(7)
        net = QNetwork.initialize(4, 8, 3, rng)
        t = make_transition(rng, net, terminal=True)
        q = net.forward(t.s)[t.a]
        # terminal: delta = Q(s,a) - r
        delta = td_delta([t], net, net)
        assert delta[0] == pytest.approx(q - t.r, abs=1e-12)

    def test_spec_terminal_example(self):
        # Q_p(s,a)=0.5, r=0.95 -> delta = -0.45: realized with a bias-only net
        net = QNetwork(
            w1=np.zeros((2, 2)), b1=np.zeros(2), w2=np.zeros((2, 1)), b2=np.array([0.5])
        )
        t = Transition(
            s=np.zeros(2), a=0, r=0.95, s_next=np.zeros(2), terminal=True,
            legal_next=np.ones(1, dtype=bool),
        )
        assert td_delta([t], net, net)[0] == pytest.approx(-0.45)

    def test_zero_networks_zero_reward(self):
        net = QNetwork(w1=np.zeros((3, 4)), b1=np.zeros(4), w2=np.zeros((4, 2)), b2=np.zeros(2))
        t = Transition(
            s=np.ones(3), a=1, r=0.0, s_next=np.ones(3), terminal=False,
            legal_next=np.ones(2, dtype=bool),
        )
        assert td_delta([t], net, net)[0] == 0.0

    def test_bootstrap_respects_legal_mask(self):
        rng = np.random.default_rng(9)
        net = QNetwork.initialize(4, 8, 3, rng)
        legal = np.array([True, False, True])
        t = make_transition(rng, net, terminal=False, legal=legal)
        q_next = net.forward(t.s_next)
        expected = net.forward(t.s)[t.a] - (
            t.r + DEFAULT_REWARD.gamma * max(q_next[0], q_next[2])
        )
        assert td_delta([t], net, net)[0] == pytest.approx(expected, abs=1e-12)

    def test_matches_hand_loop(self):
        rng = np.random.default_rng(11)
        policy = QNetwork.initialize(5, 8, 4, rng)
        target = QNetwork.initialize(5, 8, 4, rng)
        batch = [make_transition(rng, policy, terminal=bool(rng.integers(2))) for _ in range(32)]
        deltas = td_delta(batch, policy, target)
        for t, d in zip(batch, deltas):
            boot = 0.0 if t.terminal else DEFAULT_REWARD.gamma * target.forward(t.s_next).max()
            assert d == pytest.approx(policy.forward(t.s)[t.a] - (t.r + boot), abs=1e-12)


class TestAdam:
    def test_first_step_matches_closed_form(self):
        # independent trace: on f(w) = ||w||^2 from (1,1) with lr 0.1 the
        # bias-corrected first step moves each coordinate by exactly -lr
        w = np.array([1.0, 1.0])
        opt = Adam(lr=0.1)
        opt.step([w], [2.0 * w])
        assert w == pytest.approx([0.9, 0.9], abs=1e-8)

    def test_three_step_trace_against_scalar_reference(self):
        # plain-float reference implementation, kept separate from the
        # vectorized one
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        w_ref, m, v = 1.0, 0.0, 0.0
        trace = []
        for t in range(1, 4):
            g = 2.0 * w_ref
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w_ref -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            trace.append(w_ref)
        w = np.array([1.0])
        opt = Adam(lr=lr)
        for t in range(3):
            opt.step([w], [2.0 * w])
            assert w[0] == pytest.approx(trace[t], abs=1e-12)

    def test_non_finite_gradient_aborts(self):
        w = np.array([1.0])
        opt = Adam(lr=0.1)
        with pytest.raises(FloatingPointError):
            opt.step([w], [np.array([np.nan])])


class TestGradients:
    def loss_and_grads(self, net, batch):
        delta = td_delta(batch, net, net.copy())
        s = np.stack([t.s for t in batch])
        dq = np.zeros((len(batch), net.n_actions))
        dq[np.arange(len(batch)), [t.a for t in batch]] = 2.0 * delta / len(batch)
        return float(np.mean(delta**2)), net.backward(s, dq)

    def loss_only(self, net, frozen_target, batch):
        delta = td_delta(batch, net, frozen_target)
        return float(np.mean(delta**2))

    def test_analytic_matches_central_differences(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            net = QNetwork.initialize(6, 10, 4, rng)
            frozen = net.copy()
            batch = [make_transition(rng, net, terminal=bool(rng.integers(2))) for _ in range(16)]
            delta = td_delta(batch, net, frozen)
            s = np.stack([t.s for t in batch])
            dq = np.zeros((len(batch), net.n_actions))
            dq[np.arange(len(batch)), [t.a for t in batch]] = 2.0 * delta / len(batch)
            grads = net.backward(s, dq)
            h = 1e-6
            for p, g in zip(net.parameters(), grads):
                flat = p.ravel()
                idx = rng.integers(flat.size, size=min(8, flat.size))
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    up = self.loss_only(net, frozen, batch)
                    flat[i] = orig - h
                    down = self.loss_only(net, frozen, batch)
                    flat[i] = orig
                    fd = (up - down) / (2 * h)
                    scale = max(abs(fd), abs(g.ravel()[i]), 1e-8)
                    assert abs(fd - g.ravel()[i]) / scale < 1e-4

    def test_relu_gradient_zero_at_boundary(self):
        # one hidden unit with exactly zero pre-activation must pass no
        # gradient
        net = QNetwork(
            w1=np.array([[1.0, 1.0]]),
            b1=np.array([-1.0, 0.0]),
            w2=np.array([[1.0], [1.0]]),
            b2=np.array([0.0]),
        )
        x = np.array([[1.0]])  # pre-activations: (0.0, 1.0)
        grads = net.backward(x, np.array([[1.0]]))
        dw1 = grads[0]
        assert dw1[0, 0] == 0.0  # boundary unit blocked
        assert dw1[0, 1] == 1.0


class TestReplay:
    def test_capacity_bound(self):
        rng = np.random.default_rng(17)
        mem = ReplayMemory(capacity=10)
        net = QNetwork.initialize(2, 4, 2, rng)
        for _ in range(55):
            mem.push(make_transition(rng, net))
        assert len(mem) == 10

    def test_sampling_is_uniform(self):
        rng = np.random.default_rng(19)
        mem = ReplayMemory(capacity=20)
        net = QNetwork.initialize(2, 4, 2, rng)
        items = [make_transition(rng, net) for _ in range(20)]
        for t in items:
            mem.push(t)
        counts = {i: 0 for i in range(20)}
        index = {id(t): i for i, t in enumerate(items)}
        for _ in range(2000):
            for t in mem.sample(5, rng):
                counts[index[id(t)]] += 1
        from scipy import stats

        _, p = stats.chisquare(list(counts.values()))
        assert p > 0.01


class MiniMDP:
    """Two states, two actions, deterministic, cycle-free.

    s0 --a0--> s1 (r 0);   s0 --a1--> end (r 0.3)
    s1 --a0--> end (r 1);  s1 --a1--> end (r -0.1)
    """

    VECS = {0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0])}
    LEGAL = np.array([True, True])

    def __init__(self):
        self.state = 0

    def reset(self, rng):
        self.state = int(rng.integers(2))
        return self.VECS[self.state], self.LEGAL

    def step(self, action, rng):
        if self.state == 0:
            if action == 0:
                self.state = 1
                return self.VECS[1], self.LEGAL, 0.0, False
            return self.VECS[0], self.LEGAL, 0.3, True
        if action == 0:
            return self.VECS[1], self.LEGAL, 1.0, True
        return self.VECS[1], self.LEGAL, -0.1, True

    @staticmethod
    def optimal_q(gamma):
        """Independent oracle: exact value iteration on the tabular MDP."""
        q = np.zeros((2, 2))
        for _ in range(200):
            newq = np.zeros_like(q)
            newq[0, 0] = 0.0 + gamma * q[1].max()
            newq[0, 1] = 0.3
            newq[1, 0] = 1.0
            newq[1, 1] = -0.1
            q = newq
        return q


MINI_CONFIG = TrainConfig(
    state_dim=2,
    n_actions=2,
    hidden=32,
    lr=2e-3,
    batch_size=64,
    replay_capacity=5_000,
    min_replay=200,
    target_sync=100,
    episodes=13_000,
    seed=5,
)
MINI_REWARD = RewardParams(gamma=0.9)


class TestTraining:
    def test_mini_mdp_converges_to_value_iteration(self):
        q_star = MiniMDP.optimal_q(0.9)
        result = train(MiniMDP(), MINI_CONFIG, MINI_REWARD)
        learned = np.stack(
            [result.network.forward(MiniMDP.VECS[s]) for s in (0, 1)]
        )
        assert np.abs(learned - q_star).max() < 1e-2

    def test_fixed_seed_reproduces_checksum(self):
        config = TrainConfig(
            state_dim=2, n_actions=2, hidden=16, lr=3e-3, batch_size=16,
            replay_capacity=500, min_replay=50, target_sync=100, episodes=400, seed=9,
        )
        a = train(MiniMDP(), config, MINI_REWARD)
        b = train(MiniMDP(), config, MINI_REWARD)
        assert a.checksum() == b.checksum()

    def test_divergence_guard(self):
        config = TrainConfig(
            state_dim=2, n_actions=2, hidden=8, lr=1e6, batch_size=8,
            replay_capacity=200, min_replay=10, target_sync=5, episodes=2_000, seed=1,
        )
        with pytest.raises(FloatingPointError):
            train(MiniMDP(), config, MINI_REWARD)

    def test_dialogue_env_episode_shape(self, lexicon):
        rng = np.random.default_rng(23)
        contexts = [generate_context(Condition.FAR, rng) for _ in range(5)]
        env = DialogueEnv(contexts, MatcherProfile.always_select(), lexicon)
        state, legal = env.reset(rng)
        assert state.shape == (STATE_DIM,)
        assert legal[DirectorActionKind.DESCRIBE_TARGET]
        assert not legal[DirectorActionKind.AFFIRM_CLARIFICATION]
        # describe then end turn: always-select matcher finishes the episode
        state, legal, r, done = env.step(int(DirectorActionKind.DESCRIBE_TARGET), rng)
        assert not done and r == 0.0
        state, legal, r, done = env.step(int(DirectorActionKind.END_TURN), rng)
        assert done
        assert r != 0.0
        assert env.last_success is not None

    def test_greedy_director_uses_legal_actions(self, lexicon):
        rng = np.random.default_rng(29)
        net = QNetwork.initialize(STATE_DIM, 8, 6, rng)
        director = GreedyQDirector(net)
        ctx = generate_context(Condition.FAR, rng)
        state = DialogueState.initial(ctx)
        action = director(state)
        assert action in (
            DirectorActionKind.DESCRIBE_TARGET,
            DirectorActionKind.NEGATE_DISTRACTORS,
            DirectorActionKind.NEGATE_CLOSEST,
            DirectorActionKind.END_TURN,
        )

    def test_weight_artifact_round_trip(self, tmp_path):
        rng = np.random.default_rng(31)
        net = QNetwork.initialize(STATE_DIM, 16, 6, rng)
        path = tmp_path / "weights.json"
        net.save(path, seed=31, config_hash="abc")
        loaded = QNetwork.load(path)
        assert loaded.checksum() == net.checksum()
        x = rng.normal(size=STATE_DIM)
        assert loaded.forward(x) == pytest.approx(net.forward(x), abs=0)
