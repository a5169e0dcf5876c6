"""Environment simulators and the q-learning policy constructor.

Environments are stateless transition functions operating on whole batches
of trajectories at once; ``simulate`` advances all n trajectories in
lockstep, which keeps the Monte Carlo benchmark loops in numpy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, SpaceSpec
from .errors import TrainingDiverged
from .features import RandomFourierFeatures, TabularOneHotFeatures
from .policies import GreedyFromQPolicy, Policy, TabularPolicy, mixture_policy

__all__ = [
    "SyntheticGaussianMDP",
    "CliffWalkEnv",
    "MountainCarEnv",
    "QLearnConfig",
    "simulate",
    "train_q_learning",
    "mixture_policy",
    "env_by_name",
]


class SyntheticGaussianMDP:
    """Univariate Gaussian-drift MDP with binary actions and T=30.

    s_0 ~ N(0.5, 0.2^2); s_{t+1} ~ N(s_t + 0.3 a_t - 0.15, 0.2^2); reward
    r_t = s_t * (a_t - 0.2) + Gaussian noise.  The action-centering constant
    0.2 matches the evaluated policy's mean action rate, which keeps the
    true q-functions (essentially) inside the span of [s, s*a, 1] so the
    benchmark's "well-specified linear model" setting is meaningful.
    Rewards are unbounded (Gaussian states), so no q-range clipping applies.
    """

    NOISE_SD = 0.1
    ACTION_CENTER = 0.2

    def __init__(self, horizon: int = 30):
        self.space = SpaceSpec(horizon=horizon, n_actions=2, state_dim=1)
        self.reward_bounds = None

    def initial_states(self, n, rng):
        return rng.normal(0.5, 0.2, size=n)

    def step(self, t, states, actions, rng):
        s = np.asarray(states).reshape(len(states))
        noise = rng.normal(0.0, self.NOISE_SD, size=len(s))
        rewards = s * (actions - self.ACTION_CENTER) + noise
        nxt = rng.normal(s + 0.3 * actions - 0.15, 0.2)
        return rewards, nxt[:, None]


class CliffWalkEnv:
    """4x12 cliff-walking grid with a fixed horizon of T=400 steps.

    State code = row * 12 + col.  Start is the bottom-left cell, the goal is
    bottom-right, and the bottom cells between them are the cliff.  Stepping
    into the cliff costs -100 and teleports back to the start; reaching the
    goal makes the state absorbing with reward 0; every other step costs -1.
    """

    ROWS, COLS = 4, 12
    START = 3 * 12 + 0
    GOAL = 3 * 12 + 11
    CLIFF = tuple(3 * 12 + c for c in range(1, 11))
    N_ACTIONS = 4  # up, right, down, left

    def __init__(self, horizon: int = 400):
        self.space = SpaceSpec(
            horizon=horizon, n_actions=self.N_ACTIONS, n_states=self.ROWS * self.COLS
        )
        self.reward_bounds = (-100.0, 0.0)
        self._next, self._reward = self._build_tables()

    def _build_tables(self):
        S, A = self.space.n_states, self.N_ACTIONS
        nxt = np.empty((S, A), dtype=int)
        rew = np.empty((S, A))
        moves = [(-1, 0), (0, 1), (1, 0), (0, -1)]
        for s in range(S):
            r, c = divmod(s, self.COLS)
            for a, (dr, dc) in enumerate(moves):
                if s == self.GOAL:
                    nxt[s, a], rew[s, a] = self.GOAL, 0.0
                    continue
                nr = min(max(r + dr, 0), self.ROWS - 1)
                nc = min(max(c + dc, 0), self.COLS - 1)
                landing = nr * self.COLS + nc
                if landing in self.CLIFF:
                    nxt[s, a], rew[s, a] = self.START, -100.0
                else:
                    nxt[s, a], rew[s, a] = landing, -1.0
        return nxt, rew

    def initial_states(self, n, rng):
        return np.full(n, self.START, dtype=int)

    def step(self, t, states, actions, rng):
        return self._reward[states, actions], self._next[states, actions]

    def as_tabular_spec(self):
        """Exact tabular model of the deterministic dynamics, for DP oracles."""
        from .oracle import TabularMDPSpec

        S, A = self.space.n_states, self.N_ACTIONS
        p0 = np.zeros(S)
        p0[self.START] = 1.0
        trans = np.zeros((S, A, S))
        values = np.array([-100.0, -1.0, 0.0])
        rprobs = np.zeros((S, A, 3))
        for s in range(S):
            for a in range(A):
                trans[s, a, self._next[s, a]] = 1.0
                rprobs[s, a, int(np.searchsorted(values, self._reward[s, a]))] = 1.0
        return TabularMDPSpec(
            horizon=self.space.horizon,
            initial=p0,
            transitions=trans,
            reward_values=values,
            reward_probs=rprobs,
        )


class MountainCarEnv:
    """Mountain car with position clipped to [-0.7, 0.5] and T=200.

    Dynamics: v += FORCE*(a-1) - 0.0025*cos(3*p), p += v, with velocity
    zeroed at the left wall.  Position >= 0.5 is absorbing with reward 0;
    every other step costs -1.  Start: p ~ U[-0.6, -0.4], v = 0.  With the
    usual FORCE=0.001 the goal is unreachable from this narrow position
    window (the left wall kills the energy-pumping swing), so the thrust is
    raised to 0.002, the smallest round value that leaves the bang-bang
    policy comfortable margin within the horizon.
    """

    POS_RANGE = (-0.7, 0.5)
    VEL_RANGE = (-0.07, 0.07)
    GOAL = 0.5
    FORCE = 0.002

    def __init__(self, horizon: int = 200):
        self.space = SpaceSpec(horizon=horizon, n_actions=3, state_dim=2)
        self.reward_bounds = (-1.0, 0.0)

    def initial_states(self, n, rng):
        pos = rng.uniform(-0.6, -0.4, size=n)
        return np.column_stack([pos, np.zeros(n)])

    def step(self, t, states, actions, rng):
        pos, vel = states[:, 0], states[:, 1]
        done = pos >= self.GOAL
        rewards = np.where(done, 0.0, -1.0)
        new_vel = vel + self.FORCE * (actions - 1) - 0.0025 * np.cos(3.0 * pos)
        new_vel = np.clip(new_vel, *self.VEL_RANGE)
        new_pos = np.clip(pos + new_vel, *self.POS_RANGE)
        new_vel = np.where((new_pos <= self.POS_RANGE[0]) & (new_vel < 0), 0.0, new_vel)
        nxt = np.column_stack([new_pos, new_vel])
        nxt[done] = states[done]  # absorbing at the goal
        return rewards, nxt

    def feature_map(self, dim: int = 400, lengthscale: float = 0.35, seed: int = 0):
        return RandomFourierFeatures(
            dim,
            state_ranges=[self.POS_RANGE, self.VEL_RANGE],
            n_actions=self.space.n_actions,
            lengthscale=lengthscale,
            seed=seed,
        )


def simulate(env, policy: Policy, n: int, seed) -> Dataset:
    """Roll out n trajectories of length T+1; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    T1 = env.space.horizon + 1
    states = env.initial_states(n, rng)
    finite = env.space.finite_states
    if finite:
        all_states = np.empty((n, T1), dtype=int)
    else:
        all_states = np.empty((n, T1, env.space.state_dim))
        states = np.asarray(states, dtype=float).reshape(n, -1)
    all_actions = np.empty((n, T1), dtype=int)
    all_rewards = np.empty((n, T1))
    for t in range(T1):
        all_states[:, t] = states
        actions = policy.sample_actions(t, states, rng)
        rewards, states = env.step(t, states, actions, rng)
        all_actions[:, t] = actions
        all_rewards[:, t] = rewards
    return Dataset(
        env.space,
        all_states,
        all_actions,
        all_rewards,
        reward_bounds=env.reward_bounds,
    )


@dataclass
class QLearnConfig:
    """Hyperparameters for the q-learning policy constructor."""

    episodes: int = 4000
    learning_rate: float = 0.1
    epsilon: float = 0.1
    discount: float = 0.99
    max_steps: int | None = None  # defaults to the env horizon
    feature_dim: int = 400
    feature_lengthscale: float = 0.35
    feature_seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


def train_q_learning(env, config: QLearnConfig, seed) -> Policy:
    """Learn a greedy policy pi_d by standard q-learning on the environment."""
    if env.space.finite_states:
        return _train_tabular(env, config, seed)
    return _train_linear(env, config, seed)


def _train_tabular(env, config, seed):
    rng = np.random.default_rng(seed)
    S, A = env.space.n_states, env.space.n_actions
    q = np.zeros((S, A))
    max_steps = config.max_steps or env.space.horizon
    goal = getattr(env, "GOAL", None)
    for _ in range(config.episodes):
        s = int(env.initial_states(1, rng)[0])
        for _ in range(max_steps):
            if rng.random() < config.epsilon:
                a = int(rng.integers(A))
            else:
                a = int(np.argmax(q[s]))
            r, s_next = env.step(0, np.array([s]), np.array([a]), rng)
            r, s_next = float(r[0]), int(s_next[0])
            terminal = goal is not None and s_next == goal
            target = r if terminal else r + config.discount * q[s_next].max()
            q[s, a] += config.learning_rate * (target - q[s, a])
            s = s_next
            if terminal:
                break
    if not np.all(np.isfinite(q)):
        raise TrainingDiverged("tabular q-values became non-finite")
    features = TabularOneHotFeatures(S, A)
    return GreedyFromQPolicy(features, q.reshape(-1), A)


def _train_linear(env, config, seed):
    rng = np.random.default_rng(seed)
    A = env.space.n_actions
    features = env.feature_map(
        config.feature_dim, config.feature_lengthscale, config.feature_seed
    )
    w = np.zeros(features.dim)
    max_steps = config.max_steps or env.space.horizon
    goal = getattr(env, "GOAL", None)

    def qvals(s):
        phi = features(0, np.tile(s, (A, 1)), np.arange(A))
        return phi @ w, phi

    for _ in range(config.episodes):
        s = env.initial_states(1, rng)[0]
        for _ in range(max_steps):
            qs, phis = qvals(s)
            if rng.random() < config.epsilon:
                a = int(rng.integers(A))
            else:
                a = int(np.argmax(qs))
            r, s_next = env.step(0, s[None, :], np.array([a]), rng)
            r, s_next = float(r[0]), s_next[0]
            terminal = goal is not None and s_next[0] >= goal
            if terminal:
                target = r
            else:
                target = r + config.discount * qvals(s_next)[0].max()
            w += config.learning_rate * (target - qs[a]) * phis[a]
            if not np.isfinite(w).all():
                raise TrainingDiverged("linear q-learning diverged")
            s = s_next
            if terminal:
                break
    return GreedyFromQPolicy(features, w, A)


def env_by_name(name: str, **params):
    """Build an environment from its config name."""
    envs = {
        "synthetic": SyntheticGaussianMDP,
        "cliff": CliffWalkEnv,
        "mountain_car": MountainCarEnv,
    }
    if name not in envs:
        raise ValueError(f"unknown environment: {name!r}")
    return envs[name](**params)


# a greedy tabular policy is sometimes easier to inspect as a plain table
def greedy_table(policy: GreedyFromQPolicy, n_states: int) -> TabularPolicy:
    """Materialize a finite-state greedy policy as a one-hot tabular policy."""
    probs = policy.action_probs(0, np.arange(n_states))
    return TabularPolicy(probs)
