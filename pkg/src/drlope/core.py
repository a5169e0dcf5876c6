"""Trajectory data model, density ratios, and cross-fitting folds.

A dataset stores its n trajectories as dense arrays: ``actions`` and
``rewards`` with shape (n, T+1), ``states`` with shape (n, T+1) for finite
state spaces (integer codes) or (n, T+1, d) for real-vector states.  All
types here are immutable after construction and safe to share.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidFoldCount, OverlapViolation
from .policies import Policy

__all__ = [
    "SpaceSpec",
    "Trajectory",
    "Dataset",
    "FoldAssignment",
    "PolicyValueEstimate",
    "eta",
    "lambda_path",
    "eta_matrix",
    "lambda_matrix",
    "assign_folds",
    "v_from_q",
]


@dataclass(frozen=True)
class SpaceSpec:
    """Shape of the state/action spaces and the horizon (timesteps 0..T)."""

    horizon: int
    n_actions: int
    n_states: int | None = None  # finite state space if set
    state_dim: int | None = None  # real-vector state space if set

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.n_actions < 1:
            raise ValueError("need at least one action")
        if (self.n_states is None) == (self.state_dim is None):
            raise ValueError("exactly one of n_states / state_dim must be set")
        if self.n_states is not None and self.n_states < 1:
            raise ValueError("need at least one state")

    @property
    def finite_states(self) -> bool:
        return self.n_states is not None

    def to_config(self) -> dict:
        if self.finite_states:
            return {
                "state_kind": "finite",
                "n_states": self.n_states,
                "n_actions": self.n_actions,
                "horizon": self.horizon,
            }
        return {
            "state_kind": "real_vector",
            "state_dim": self.state_dim,
            "n_actions": self.n_actions,
            "horizon": self.horizon,
        }

    @staticmethod
    def from_config(cfg: dict) -> "SpaceSpec":
        if cfg["state_kind"] == "finite":
            return SpaceSpec(cfg["horizon"], cfg["n_actions"], n_states=cfg["n_states"])
        return SpaceSpec(cfg["horizon"], cfg["n_actions"], state_dim=cfg["state_dim"])


@dataclass(frozen=True)
class Trajectory:
    """One logged episode: (s_0, a_0, r_0, ..., s_T, a_T, r_T)."""

    states: list
    actions: list
    rewards: list

    def __post_init__(self):
        if not (len(self.states) == len(self.actions) == len(self.rewards)):
            raise ValueError("states, actions, rewards must share length T+1")

    @property
    def horizon(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class Dataset:
    """n trajectories plus the declared bounds of the generating process."""

    space: SpaceSpec
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    reward_bounds: tuple[float, float] | None = None
    ratio_bound: float | None = None

    def __post_init__(self):
        T1 = self.space.horizon + 1
        n = self.actions.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one trajectory")
        if self.actions.shape != (n, T1) or self.rewards.shape != (n, T1):
            raise ValueError("actions/rewards must have shape (n, T+1)")
        if self.space.finite_states:
            if self.states.shape != (n, T1):
                raise ValueError("finite states must have shape (n, T+1)")
            if self.states.min() < 0 or self.states.max() >= self.space.n_states:
                raise ValueError("state code out of range")
        else:
            if self.states.shape != (n, T1, self.space.state_dim):
                raise ValueError("states must have shape (n, T+1, d)")
        if self.actions.min() < 0 or self.actions.max() >= self.space.n_actions:
            raise ValueError("action index out of range")
        if self.reward_bounds is not None:
            lo, hi = self.reward_bounds
            if self.rewards.min() < lo - 1e-12 or self.rewards.max() > hi + 1e-12:
                raise ValueError("reward outside declared bounds")

    @property
    def n(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.space.horizon

    def states_at(self, t: int) -> np.ndarray:
        return self.states[:, t]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            states=self.states[i].tolist(),
            actions=self.actions[i].tolist(),
            rewards=self.rewards[i].tolist(),
        )

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            self.space,
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.reward_bounds,
            self.ratio_bound,
        )

    @staticmethod
    def from_trajectories(
        space: SpaceSpec,
        trajectories,
        reward_bounds=None,
        ratio_bound=None,
    ) -> "Dataset":
        if space.finite_states:
            states = np.array([tr.states for tr in trajectories], dtype=int)
        else:
            states = np.array(
                [np.reshape(tr.states, (space.horizon + 1, space.state_dim)) for tr in trajectories],
                dtype=float,
            )
        return Dataset(
            space,
            states,
            np.array([tr.actions for tr in trajectories], dtype=int),
            np.array([tr.rewards for tr in trajectories], dtype=float),
            reward_bounds,
            ratio_bound,
        )

    def save_jsonl(self, path) -> None:
        header = {
            "space": self.space.to_config(),
            "reward_bounds": list(self.reward_bounds) if self.reward_bounds else None,
            "ratio_bound": self.ratio_bound,
        }
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(header) + "\n")
            for i in range(self.n):
                rec = {
                    "states": self.states[i].tolist(),
                    "actions": self.actions[i].tolist(),
                    "rewards": self.rewards[i].tolist(),
                }
                f.write(json.dumps(rec) + "\n")

    @staticmethod
    def load_jsonl(path) -> "Dataset":
        with open(path, "r", encoding="utf-8") as f:
            header = json.loads(f.readline())
            space = SpaceSpec.from_config(header["space"])
            trajectories = [
                Trajectory(rec["states"], rec["actions"], rec["rewards"])
                for rec in map(json.loads, f)
            ]
        bounds = header.get("reward_bounds")
        return Dataset.from_trajectories(
            space,
            trajectories,
            reward_bounds=tuple(bounds) if bounds else None,
            ratio_bound=header.get("ratio_bound"),
        )


@dataclass(frozen=True)
class PolicyValueEstimate:
    """Point estimate of a policy value with its plug-in standard error."""

    rho_hat: float
    std_error: float
    n: int
    estimator_name: str

    def __post_init__(self):
        if not np.isfinite(self.std_error) or self.std_error < 0:
            raise ValueError("standard error must be finite and nonnegative")


def eta(behavior: Policy, target: Policy, t: int, s, a: int) -> float:
    """Single-step density ratio pi_e(a|s) / pi_b(a|s); 0/0 maps to 0."""
    pe = target.prob(t, s, a)
    pb = behavior.prob(t, s, a)
    if pb == 0.0:
        if pe > 0.0:
            raise OverlapViolation(
                f"target mass {pe} on action {a} at t={t} never taken by behavior"
            )
        return 0.0
    return pe / pb


def eta_matrix(data: Dataset, behavior: Policy, target: Policy) -> np.ndarray:
    """Per-step ratios eta_t along every trajectory, shape (n, T+1)."""
    n, T1 = data.actions.shape
    out = np.empty((n, T1))
    rows = np.arange(n)
    for t in range(T1):
        pe = target.action_probs(t, data.states_at(t))[rows, data.actions[:, t]]
        pb = behavior.action_probs(t, data.states_at(t))[rows, data.actions[:, t]]
        bad = (pb == 0.0) & (pe > 0.0)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise OverlapViolation(
                f"trajectory {i}, t={t}: behavior mass 0, target mass {pe[i]}"
            )
        out[:, t] = np.divide(pe, pb, out=np.zeros(n), where=pb > 0.0)
    return out


def lambda_matrix(data: Dataset, behavior: Policy, target: Policy) -> np.ndarray:
    """Cumulative ratios lambda_t = prod_{k<=t} eta_k, shape (n, T+1)."""
    return np.cumprod(eta_matrix(data, behavior, target), axis=1)


def lambda_path(traj: Trajectory, behavior: Policy, target: Policy) -> list[float]:
    """Cumulative ratio path for one trajectory (length T+1)."""
    out = []
    acc = 1.0
    for t, (s, a) in enumerate(zip(traj.states, traj.actions)):
        acc *= eta(behavior, target, t, s, a)
        out.append(acc)
    return out


@dataclass(frozen=True)
class FoldAssignment:
    """K-fold split: permute indices, then cut into contiguous blocks."""

    n: int
    K: int
    permutation: np.ndarray  # permutation applied to 0..n-1
    fold_of: np.ndarray = field(init=False)  # fold in 1..K per original index

    def __post_init__(self):
        if not (2 <= self.K <= self.n):
            raise InvalidFoldCount(f"need 2 <= K <= n, got K={self.K}, n={self.n}")
        positions = np.empty(self.n, dtype=int)
        positions[self.permutation] = np.arange(self.n)
        folds = 1 + (positions * self.K) // self.n
        object.__setattr__(self, "fold_of", folds)

    def fold_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == j)

    def complement_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != j)


def assign_folds(n: int, K: int, seed) -> FoldAssignment:
    """Randomly permute 0..n-1 and assign contiguous blocks to K folds."""
    if not (2 <= K <= n):
        raise InvalidFoldCount(f"need 2 <= K <= n, got K={K}, n={n}")
    rng = np.random.default_rng(seed)
    return FoldAssignment(n=n, K=K, permutation=rng.permutation(n))


def v_from_q(qfun, target: Policy, t: int, s) -> float:
    """Exact v(s) = sum_a pi_e(a|s) q(t, s, a) over the finite action set."""
    return float(
        sum(target.prob(t, s, a) * qfun(t, s, a) for a in range(target.n_actions))
    )
