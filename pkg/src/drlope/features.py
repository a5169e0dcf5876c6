"""Feature maps used by linear nuisance models and greedy policies.

A feature map turns a batch of (state, action) pairs at a given timestep
into a fixed-width design matrix.  Finite-state maps receive integer state
codes; continuous maps receive float arrays of shape (m, d).
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "FeatureMap",
    "InterceptFeatures",
    "LinearInteractionFeatures",
    "QuadraticInteractionFeatures",
    "TabularOneHotFeatures",
    "RandomFourierFeatures",
    "feature_map_from_config",
]


class FeatureMap:
    """Base class: emits a (m, dim) design matrix from (t, states, actions)."""

    dim: int

    def __call__(self, t: int, states, actions) -> np.ndarray:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


class InterceptFeatures(FeatureMap):
    """Constant-1 feature; regression on it recovers the sample mean."""

    dim = 1

    def __call__(self, t, states, actions):
        m = np.shape(states)[0]
        return np.ones((m, 1))

    def to_config(self):
        return {"name": "intercept"}


class LinearInteractionFeatures(FeatureMap):
    """[s, s*a, 1] for univariate continuous state and integer action."""

    dim = 3

    def __call__(self, t, states, actions):
        s = np.asarray(states, dtype=float).reshape(len(states), -1)[:, 0]
        a = np.asarray(actions, dtype=float)
        return np.column_stack([s, s * a, np.ones_like(s)])

    def to_config(self):
        return {"name": "linear_interaction"}


class QuadraticInteractionFeatures(FeatureMap):
    """[s^2, s^2*a, 1]; deliberately misspecified when the truth is linear."""

    dim = 3

    def __call__(self, t, states, actions):
        s = np.asarray(states, dtype=float).reshape(len(states), -1)[:, 0]
        a = np.asarray(actions, dtype=float)
        return np.column_stack([s**2, s**2 * a, np.ones_like(s)])

    def to_config(self):
        return {"name": "quadratic_interaction"}


class TabularOneHotFeatures(FeatureMap):
    """One indicator per (state, action) cell of a finite space."""

    def __init__(self, n_states: int, n_actions: int):
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        self.dim = self.n_states * self.n_actions

    def cell_index(self, states, actions) -> np.ndarray:
        return np.asarray(states, dtype=int) * self.n_actions + np.asarray(
            actions, dtype=int
        )

    def __call__(self, t, states, actions):
        idx = self.cell_index(states, actions)
        out = np.zeros((len(idx), self.dim))
        out[np.arange(len(idx)), idx] = 1.0
        return out

    def to_config(self):
        return {
            "name": "tabular_one_hot",
            "n_states": self.n_states,
            "n_actions": self.n_actions,
        }


class RandomFourierFeatures(FeatureMap):
    """Random Fourier approximation of an RBF kernel on scaled (s, a) input.

    Each state dimension is affinely mapped from its declared range to
    [-1, 1]; the action index is mapped to [-1, 1] as well, so a single
    kernel lengthscale is meaningful across heterogeneous inputs.
    """

    def __init__(
        self,
        dim: int,
        state_ranges,
        n_actions: int,
        lengthscale: float = 0.3,
        seed: int = 0,
        weights=None,
        phases=None,
    ):
        self.dim = int(dim)
        self.state_ranges = [tuple(map(float, r)) for r in state_ranges]
        self.n_actions = int(n_actions)
        self.lengthscale = float(lengthscale)
        self.seed = int(seed)
        d_in = len(self.state_ranges) + 1
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = rng.normal(0.0, 1.0 / self.lengthscale, size=(d_in, self.dim))
            phases = rng.uniform(0.0, 2.0 * np.pi, size=self.dim)
        self.weights = np.asarray(weights, dtype=float)
        self.phases = np.asarray(phases, dtype=float)

    def _scale_states(self, states):
        s = np.asarray(states, dtype=float).reshape(len(states), -1)
        cols = []
        for j, (lo, hi) in enumerate(self.state_ranges):
            cols.append(2.0 * (s[:, j] - lo) / (hi - lo) - 1.0)
        return cols

    def _scale_action(self, actions):
        a = np.asarray(actions, dtype=float)
        if self.n_actions > 1:
            return 2.0 * a / (self.n_actions - 1) - 1.0
        return np.zeros_like(a)

    def _scale(self, states, actions):
        return np.column_stack(
            self._scale_states(states) + [self._scale_action(actions)]
        )

    def __call__(self, t, states, actions):
        x = self._scale(states, actions)
        return np.sqrt(2.0 / self.dim) * np.cos(x @ self.weights + self.phases)

    def dot_all_actions(self, t, states, coefs) -> np.ndarray:
        """phi(s, a) @ coefs for every action at once, shape (n, n_actions).

        cos(b + d_a) = cos(b) cos(d_a) - sin(b) sin(d_a) lets one trig pass
        over the states serve all actions, which is much cheaper than
        featurizing per action when n_actions > 1.
        """
        base = (
            np.column_stack(self._scale_states(states)) @ self.weights[:-1]
            + self.phases
        )
        cos_b, sin_b = np.cos(base), np.sin(base)
        deltas = np.outer(
            self._scale_action(np.arange(self.n_actions)), self.weights[-1]
        )  # (n_actions, dim)
        coefs = np.asarray(coefs, dtype=float)
        u = np.cos(deltas) * coefs  # (n_actions, dim)
        v = np.sin(deltas) * coefs
        return np.sqrt(2.0 / self.dim) * (cos_b @ u.T - sin_b @ v.T)

    def to_config(self):
        return {
            "name": "random_fourier",
            "dim": self.dim,
            "state_ranges": [list(r) for r in self.state_ranges],
            "n_actions": self.n_actions,
            "lengthscale": self.lengthscale,
            "seed": self.seed,
        }


_REGISTRY = {
    "intercept": lambda cfg: InterceptFeatures(),
    "linear_interaction": lambda cfg: LinearInteractionFeatures(),
    "quadratic_interaction": lambda cfg: QuadraticInteractionFeatures(),
    "tabular_one_hot": lambda cfg: TabularOneHotFeatures(
        cfg["n_states"], cfg["n_actions"]
    ),
    "random_fourier": lambda cfg: RandomFourierFeatures(
        cfg["dim"],
        cfg["state_ranges"],
        cfg["n_actions"],
        lengthscale=cfg["lengthscale"],
        seed=cfg["seed"],
    ),
}


def feature_map_from_config(cfg: dict) -> FeatureMap:
    """Rebuild a feature map from its ``to_config()`` dictionary."""
    name = cfg["name"]
    if name not in _REGISTRY:
        raise ValueError(f"unknown feature map: {name!r}")
    return _REGISTRY[name](cfg)
