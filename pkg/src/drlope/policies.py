"""Policy abstractions with exact probability mass queries and sampling.

All policies have finite action support.  The vectorized entry point is
``action_probs(t, states)``, which returns one categorical distribution per
state; ``prob`` and ``sample`` are thin scalar wrappers used by the
per-trajectory operations.
"""
from __future__ import annotations

import numpy as np

from .features import FeatureMap, feature_map_from_config

__all__ = [
    "Policy",
    "TabularPolicy",
    "UniformPolicy",
    "LogisticBernoulliPolicy",
    "MixturePolicy",
    "GreedyFromQPolicy",
    "mixture_policy",
    "policy_from_config",
    "sample_categorical",
]


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one action per row of a (m, A) probability matrix."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(len(probs))
    return np.minimum((u[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)


class Policy:
    n_actions: int

    def action_probs(self, t: int, states) -> np.ndarray:
        """Return the (m, n_actions) action distribution at each state."""
        raise NotImplementedError

    def prob(self, t: int, s, a: int) -> float:
        return float(self.action_probs(t, _batch(s))[0, a])

    def sample(self, t: int, s, rng: np.random.Generator) -> int:
        return int(self.sample_actions(t, _batch(s), rng)[0])

    def sample_actions(self, t, states, rng: np.random.Generator) -> np.ndarray:
        return sample_categorical(self.action_probs(t, states), rng)

    def to_config(self) -> dict:
        raise NotImplementedError


def _batch(s):
    arr = np.asarray(s)
    return arr.reshape(1) if arr.ndim == 0 else arr.reshape(1, -1)


class TabularPolicy(Policy):
    """Stochastic matrix per timestep over a finite state space.

    ``table`` has shape (S, A) for a stationary policy or (T+1, S, A) for a
    time-varying one.
    """

    def __init__(self, table):
        table = np.asarray(table, dtype=float)
        if table.ndim not in (2, 3):
            raise ValueError("table must be (S, A) or (T+1, S, A)")
        if np.any(table < 0):
            raise ValueError("negative action probability")
        sums = table.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=1e-12):
            raise ValueError("rows of a policy table must sum to 1")
        self.table = table
        self.n_actions = table.shape[-1]

    def _at(self, t):
        return self.table if self.table.ndim == 2 else self.table[t]

    def action_probs(self, t, states):
        return self._at(t)[np.asarray(states, dtype=int)]

    def to_config(self):
        return {"kind": "tabular", "table": self.table.tolist()}


class UniformPolicy(Policy):
    """Uniform over a finite action set, for any state kind."""

    def __init__(self, n_actions: int):
        self.n_actions = int(n_actions)

    def action_probs(self, t, states):
        m = np.shape(states)[0]
        return np.full((m, self.n_actions), 1.0 / self.n_actions)

    def to_config(self):
        return {"kind": "uniform", "n_actions": self.n_actions}


class LogisticBernoulliPolicy(Policy):
    """Binary-action policy P(a=1|s) = scale / (1 + exp(-rate*s)) + offset.

    The offset absorbs the mean of the uniform noise term in the generating
    description, so mass queries are deterministic while the marginal action
    law is unchanged.
    """

    n_actions = 2

    def __init__(self, scale: float, rate: float, offset: float):
        self.scale = float(scale)
        self.rate = float(rate)
        self.offset = float(offset)
        if not (0.0 <= self.offset and self.scale + self.offset <= 1.0):
            raise ValueError("policy mass must stay within [0, 1]")

    def p_one(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=float).reshape(np.shape(states)[0], -1)[:, 0]
        return self.scale / (1.0 + np.exp(-self.rate * s)) + self.offset

    def action_probs(self, t, states):
        p1 = self.p_one(states)
        return np.column_stack([1.0 - p1, p1])

    def to_config(self):
        return {
            "kind": "logistic_bernoulli",
            "scale": self.scale,
            "rate": self.rate,
            "offset": self.offset,
        }


class MixturePolicy(Policy):
    """(1 - alpha) * base + alpha * uniform."""

    def __init__(self, base: Policy, alpha: float):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.base = base
        self.alpha = float(alpha)
        self.n_actions = base.n_actions

    def action_probs(self, t, states):
        base = self.base.action_probs(t, states)
        return (1.0 - self.alpha) * base + self.alpha / self.n_actions

    def to_config(self):
        return {
            "kind": "mixture",
            "alpha": self.alpha,
            "base": self.base.to_config(),
        }


class GreedyFromQPolicy(Policy):
    """Deterministic argmax of a linear q-model beta @ phi(s, a).

    Ties break toward the lowest action index so the policy is a
    well-defined function of the coefficients.
    """

    def __init__(self, features: FeatureMap, coefficients, n_actions: int):
        self.features = features
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.n_actions = int(n_actions)
        # On a finite state space the features are time-invariant, so the
        # whole policy collapses to one per-state probability table.
        self._table = None
        n_states = getattr(features, "n_states", None)
        if n_states is not None:
            all_states = np.arange(n_states)
            q = self._q_from_features(0, all_states)
            greedy = np.argmax(q, axis=1)
            self._table = np.zeros_like(q)
            self._table[all_states, greedy] = 1.0
        # One evaluation pipeline typically asks for the probabilities of the
        # same state batch several times (behavior and target mixtures share
        # this base policy, and every density-ratio pass re-walks the data),
        # so keep a small memo keyed by the raw state bytes.
        self._memo: dict = {}

    def _q_from_features(self, t, states) -> np.ndarray:
        all_actions = getattr(self.features, "dot_all_actions", None)
        if all_actions is not None:
            return all_actions(t, states, self.coefficients)
        m = np.shape(states)[0]
        out = np.empty((m, self.n_actions))
        for a in range(self.n_actions):
            phi = self.features(t, states, np.full(m, a))
            out[:, a] = phi @ self.coefficients
        return out

    def q_values(self, t, states) -> np.ndarray:
        return self._q_from_features(t, states)

    def action_probs(self, t, states):
        if self._table is not None:
            return self._table[np.asarray(states, dtype=int)]
        key = (t, np.ascontiguousarray(states).tobytes())
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        q = self.q_values(t, states)
        greedy = np.argmax(q, axis=1)
        probs = np.zeros_like(q)
        probs[np.arange(len(q)), greedy] = 1.0
        if len(self._memo) >= 4096:
            self._memo.clear()
        self._memo[key] = probs
        return probs

    def to_config(self):
        return {
            "kind": "greedy_from_q",
            "features": self.features.to_config(),
            "coefficients": self.coefficients.tolist(),
            "n_actions": self.n_actions,
        }


def mixture_policy(pi_d: Policy, alpha: float) -> Policy:
    """Blend a base policy with the uniform policy over its action set."""
    return MixturePolicy(pi_d, alpha)


def policy_from_config(cfg: dict) -> Policy:
    kind = cfg["kind"]
    if kind == "tabular":
        return TabularPolicy(np.asarray(cfg["table"]))
    if kind == "uniform":
        return UniformPolicy(cfg["n_actions"])
    if kind == "logistic_bernoulli":
        return LogisticBernoulliPolicy(cfg["scale"], cfg["rate"], cfg["offset"])
    if kind == "mixture":
        return MixturePolicy(policy_from_config(cfg["base"]), cfg["alpha"])
    if kind == "greedy_from_q":
        return GreedyFromQPolicy(
            feature_map_from_config(cfg["features"]),
            np.asarray(cfg["coefficients"]),
            cfg["n_actions"],
        )
    raise ValueError(f"unknown policy kind: {kind!r}")
