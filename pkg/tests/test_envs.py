"""Environment simulators and the q-learning policy constructor."""
import numpy as np
import pytest

from drlope import (
    CliffWalkEnv,
    MountainCarEnv,
    QLearnConfig,
    SyntheticGaussianMDP,
    TabularPolicy,
    UniformPolicy,
    env_by_name,
    simulate,
    train_q_learning,
)


def always(action: int, n_states: int, n_actions: int) -> TabularPolicy:
    table = np.zeros((n_states, n_actions))
    table[:, action] = 1.0
    return TabularPolicy(table)


class TestSimulate:
    def test_synthetic_trajectory_has_31_triples(self):
        env = SyntheticGaussianMDP()
        data = simulate(env, UniformPolicy(2), 1, seed=0)
        assert data.states.shape == (1, 31, 1)
        assert data.actions.shape == (1, 31)
        assert data.rewards.shape == (1, 31)

    def test_synthetic_transition_mean(self):
        env = SyntheticGaussianMDP()
        rng = np.random.default_rng(0)
        s = np.full((200000, 1), 0.4)
        for a in (0, 1):
            _, nxt = env.step(0, s, np.full(len(s), a), rng)
            assert nxt.mean() == pytest.approx(0.4 + 0.3 * a - 0.15, abs=2e-3)

    def test_cliff_always_right_falls_immediately(self):
        env = CliffWalkEnv()
        right = always(1, env.space.n_states, env.N_ACTIONS)
        data = simulate(env, right, 1, seed=0)
        # One step right from the start lands in the first cliff cell:
        # reward -100 and reset to start.
        assert data.states[0, 0] == env.START
        assert data.rewards[0, 0] == -100.0
        assert data.states[0, 1] == env.START

    def test_cliff_hand_traced_safe_path(self):
        # Up, 11x right, down: 13 moves along the row above the cliff.
        env = CliffWalkEnv(horizon=20)
        moves = [0] + [1] * 11 + [2] + [1] * 8
        table = np.zeros((21, env.space.n_states, env.N_ACTIONS))
        for t, a in enumerate(moves):
            table[t, :, a] = 1.0
        data = simulate(env, TabularPolicy(table), 1, seed=0)
        assert data.states[0, 13] == env.GOAL
        assert data.rewards[0].sum() == -13.0  # 13 steps, then absorbing zeros
        assert np.all(data.states[0, 13:] == env.GOAL)

    def test_mountain_car_stay_never_reaches_goal(self):
        env = MountainCarEnv()

        class Stay(UniformPolicy):
            def action_probs(self, t, states):
                out = np.zeros((np.shape(states)[0], 3))
                out[:, 1] = 1.0
                return out

        data = simulate(env, Stay(3), 4, seed=0)
        assert np.all(data.rewards == -1.0)
        assert data.states[:, :, 0].max() < 0.0

    def test_simulate_deterministic_in_seed(self):
        env = SyntheticGaussianMDP()
        a = simulate(env, UniformPolicy(2), 7, seed=42)
        b = simulate(env, UniformPolicy(2), 7, seed=42)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.rewards, b.rewards)

    def test_env_by_name(self):
        assert isinstance(env_by_name("synthetic"), SyntheticGaussianMDP)
        assert isinstance(env_by_name("cliff"), CliffWalkEnv)
        assert isinstance(env_by_name("mountain_car"), MountainCarEnv)
        with pytest.raises(Exception):
            env_by_name("nope")


class TestCliffModel:
    def test_tabular_spec_matches_step(self):
        env = CliffWalkEnv()
        spec = env.as_tabular_spec()
        rng = np.random.default_rng(0)
        for s in range(env.space.n_states):
            for a in range(env.N_ACTIONS):
                r, nxt = env.step(0, np.array([s]), np.array([a]), rng)
                assert spec.transitions[s, a, int(nxt[0])] == 1.0
                assert spec.mean_rewards()[s, a] == r[0]


class TestQLearning:
    def test_cliff_reaches_near_optimal(self):
        env = CliffWalkEnv()
        cfg = QLearnConfig(episodes=4000)
        pid = train_q_learning(env, cfg, seed=0)
        data = simulate(env, pid, 1, seed=1)
        assert data.rewards.sum() >= -20.0

    def test_mountain_car_reaches_goal(self):
        env = MountainCarEnv()
        cfg = QLearnConfig(
            episodes=1000,
            learning_rate=0.2,
            epsilon=0.0,
            discount=1.0,
            feature_lengthscale=0.15,
        )
        pid = train_q_learning(env, cfg, seed=0)
        data = simulate(env, pid, 1, seed=1)
        assert data.states[0, :, 0].max() >= env.GOAL

    def test_degenerate_single_episode_is_valid_policy(self):
        env = CliffWalkEnv()
        pid = train_q_learning(env, QLearnConfig(episodes=1), seed=0)
        probs = pid.action_probs(0, np.arange(env.space.n_states))
        assert probs.shape == (48, 4)
        assert np.allclose(probs.sum(axis=1), 1.0)
