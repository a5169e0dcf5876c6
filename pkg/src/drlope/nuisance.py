"""Fitted nuisances: linear q-functions and density-ratio models.

The q-model is a per-timestep ridge regression fit backwards through time;
ratio models come in four kinds (exact cumulative ratio from the known
policies, per-state histogram, Epanechnikov kernel smoother, and direct
least squares on state-action features).  Every fitted model exposes
``weights(data) -> (n, T+1)`` giving its per-step trajectory weight, which
is all the estimators need.
"""
from __future__ import annotations

import numpy as np

from .core import Dataset, eta_matrix, lambda_matrix
from .errors import (
    InfiniteStateSpace,
    NonpositiveBandwidth,
    OverlapViolation,
    SingularDesign,
)
from .features import FeatureMap, TabularOneHotFeatures, feature_map_from_config
from .policies import Policy, policy_from_config

__all__ = [
    "LinearQModel",
    "fit_q_backward",
    "KnownLambdaRatio",
    "HistogramWRatio",
    "KernelWRatio",
    "LeastSquaresMuRatio",
    "fit_w_histogram",
    "fit_w_kernel",
    "select_bandwidth",
    "fit_mu_ls",
    "mu_from_w",
    "ratio_model_from_config",
]


def _ridge_solve(X, y, ridge):
    """Normal-equation solve; min-norm is never silently substituted."""
    G = X.T @ X + ridge * np.eye(X.shape[1])
    if ridge == 0.0 and np.linalg.matrix_rank(G) < X.shape[1]:
        raise SingularDesign("rank-deficient design with zero ridge")
    try:
        return np.linalg.solve(G, X.T @ y)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded above
        raise SingularDesign(str(exc)) from exc


class LinearQModel:
    """Per-timestep linear q-function with range clipping.

    Predictions at step t are clipped to [(T+1-t)*r_min, (T+1-t)*r_max],
    the range any true q-value must lie in given the per-step reward bounds.
    """

    def __init__(self, features: FeatureMap, coefs: np.ndarray, reward_bounds=None):
        self.features = features
        self.coefs = np.asarray(coefs, dtype=float)  # (T+1, dim)
        self.reward_bounds = reward_bounds

    @property
    def horizon(self) -> int:
        return self.coefs.shape[0] - 1

    def q(self, t, states, actions):
        if isinstance(self.features, TabularOneHotFeatures):
            # indexing the coefficient vector avoids building the one-hot
            # design matrix; identical result
            raw = self.coefs[t][self.features.cell_index(states, actions)]
        else:
            raw = self.features(t, states, actions) @ self.coefs[t]
        if self.reward_bounds is None:
            return raw
        steps = self.horizon + 1 - t
        return np.clip(raw, steps * self.reward_bounds[0], steps * self.reward_bounds[1])

    def v(self, t, states, target: Policy):
        probs = target.action_probs(t, states)
        all_actions = getattr(self.features, "dot_all_actions", None)
        if all_actions is not None:
            qa = all_actions(t, states, self.coefs[t])
            if self.reward_bounds is not None:
                steps = self.horizon + 1 - t
                qa = np.clip(
                    qa,
                    steps * self.reward_bounds[0],
                    steps * self.reward_bounds[1],
                )
            return np.einsum("na,na->n", probs, qa)
        out = np.zeros(len(probs))
        for a in range(probs.shape[1]):
            out += probs[:, a] * self.q(t, states, np.full(len(probs), a))
        return out

    def to_config(self) -> dict:
        return {
            "model": "linear_q",
            "features": self.features.to_config(),
            "coefs": self.coefs.tolist(),
            "reward_bounds": list(self.reward_bounds) if self.reward_bounds else None,
        }

    @staticmethod
    def from_config(cfg: dict) -> "LinearQModel":
        rb = cfg["reward_bounds"]
        return LinearQModel(
            feature_map_from_config(cfg["features"]),
            np.array(cfg["coefs"]),
            tuple(rb) if rb else None,
        )


def fit_q_backward(
    train: Dataset, target: Policy, features: FeatureMap, ridge: float = 1e-8
) -> LinearQModel:
    """Backward-recursive least squares for the q-function.

    The last step regresses r_T on the features of (s_T, a_T); each earlier
    step regresses r_t + v_hat_{t+1}(s_{t+1}) on the features of (s_t, a_t),
    where v_hat is the fitted model's own exact action-average.
    """
    if train.n == 0:
        raise ValueError("training set is empty")
    T = train.horizon
    coefs = np.zeros((T + 1, features.dim))
    model = LinearQModel(features, coefs, train.reward_bounds)
    onehot = isinstance(features, TabularOneHotFeatures)
    v_next = np.zeros(train.n)
    for t in range(T, -1, -1):
        y = train.rewards[:, t] + v_next
        s, a = train.states_at(t), train.actions[:, t]
        if onehot:
            cells = features.cell_index(s, a)
            counts = np.bincount(cells, minlength=features.dim).astype(float)
            if ridge == 0.0 and (counts == 0).any():
                raise SingularDesign("unvisited state-action cells with zero ridge")
            sums = np.bincount(cells, weights=y, minlength=features.dim)
            coefs[t] = sums / (counts + ridge)
        else:
            coefs[t] = _ridge_solve(features(t, s, a), y, ridge)
        if t > 0:
            v_next = model.v(t, train.states_at(t), target)
    return model


class _RatioBase:
    kind = "base"
    clip_bound: float | None = None

    def _clip(self, values):
        hi = np.inf if self.clip_bound is None else self.clip_bound
        return np.clip(values, 0.0, hi)


class KnownLambdaRatio(_RatioBase):
    """Exact cumulative density ratio computed from the known policies."""

    kind = "known_lambda"

    def __init__(self, behavior: Policy, target: Policy):
        self.behavior = behavior
        self.target = target

    def weights(self, data: Dataset) -> np.ndarray:
        return lambda_matrix(data, self.behavior, self.target)

    def to_config(self):
        return {
            "model": "known_lambda",
            "behavior": self.behavior.to_config(),
            "target": self.target.to_config(),
        }


class HistogramWRatio(_RatioBase):
    """Per-state table of w_hat with weights mu_hat = eta * w_hat(s)."""

    kind = "histogram_w"

    def __init__(self, table: np.ndarray, behavior: Policy, target: Policy, clip_bound=None):
        self.table = np.asarray(table, dtype=float)  # (T+1, S)
        self.behavior = behavior
        self.target = target
        self.clip_bound = clip_bound

    def w(self, t, states):
        return self.table[t][np.asarray(states, dtype=int)]

    def weights(self, data: Dataset) -> np.ndarray:
        eta = eta_matrix(data, self.behavior, self.target)
        w = np.empty_like(eta)
        for t in range(data.horizon + 1):
            w[:, t] = self.w(t, data.states_at(t))
        return self._clip(eta * w)

    def to_config(self):
        return {
            "model": "histogram_w",
            "table": self.table.tolist(),
            "behavior": self.behavior.to_config(),
            "target": self.target.to_config(),
            "clip_bound": self.clip_bound,
        }


def fit_w_histogram(
    train: Dataset, behavior: Policy, target: Policy, clip_bound=None
) -> HistogramWRatio:
    """Histogram estimate of w_t(s): the mean of lambda_{t-1} per visited state.

    Unvisited states map to 0 (they contribute nothing to behavior-data
    averages); w_hat at t=0 is identically 1 because lambda_{-1} = 1.
    """
    if not train.space.finite_states:
        raise InfiniteStateSpace("histogram ratio needs a finite state space")
    S, T = train.space.n_states, train.horizon
    lam = lambda_matrix(train, behavior, target)
    table = np.zeros((T + 1, S))
    table[0] = 1.0
    for t in range(1, T + 1):
        s = train.states_at(t)
        counts = np.bincount(s, minlength=S).astype(float)
        sums = np.bincount(s, weights=lam[:, t - 1], minlength=S)
        np.divide(sums, counts, out=table[t], where=counts > 0)
    return HistogramWRatio(table, behavior, target, clip_bound)


def _epanechnikov_weights(queries, points, bandwidth):
    """(n_query, n_train) product-Epanechnikov kernel weights."""
    u = (queries[:, None, :] - points[None, :, :]) / bandwidth
    return np.prod(np.maximum(0.75 * (1.0 - u**2), 0.0), axis=2)


class KernelWRatio(_RatioBase):
    """Nadaraya-Watson smoother of lambda_{t-1} against the state at t."""

    kind = "kernel_w"

    def __init__(self, points, lam_prev, bandwidth, behavior, target, clip_bound=None):
        if bandwidth <= 0:
            raise NonpositiveBandwidth(f"bandwidth must be positive, got {bandwidth}")
        self.points = points  # list over t of (m, d) training states
        self.lam_prev = lam_prev  # list over t of (m,) lambda_{t-1} values
        self.bandwidth = float(bandwidth)
        self.behavior = behavior
        self.target = target
        self.clip_bound = clip_bound

    def w(self, t, states):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        k = _epanechnikov_weights(states, self.points[t], self.bandwidth)
        mass = k.sum(axis=1)
        num = k @ self.lam_prev[t]
        return np.divide(num, mass, out=np.zeros_like(num), where=mass > 0)

    def weights(self, data: Dataset) -> np.ndarray:
        eta = eta_matrix(data, self.behavior, self.target)
        w = np.empty_like(eta)
        w[:, 0] = 1.0
        for t in range(1, data.horizon + 1):
            w[:, t] = self.w(t, data.states_at(t))
        return self._clip(eta * w)

    def to_config(self):
        return {
            "model": "kernel_w",
            "points": [p.tolist() for p in self.points],
            "lam_prev": [v.tolist() for v in self.lam_prev],
            "bandwidth": self.bandwidth,
            "behavior": self.behavior.to_config(),
            "target": self.target.to_config(),
            "clip_bound": self.clip_bound,
        }


def fit_w_kernel(
    train: Dataset, behavior: Policy, target: Policy, bandwidth: float, clip_bound=None
) -> KernelWRatio:
    if train.space.finite_states:
        raise InfiniteStateSpace("kernel ratio is for real-vector states")
    lam = lambda_matrix(train, behavior, target)
    points, lam_prev = [], []
    for t in range(train.horizon + 1):
        points.append(np.asarray(train.states_at(t), dtype=float))
        lam_prev.append(np.ones(train.n) if t == 0 else lam[:, t - 1])
    return KernelWRatio(points, lam_prev, bandwidth, behavior, target, clip_bound)


def select_bandwidth(train: Dataset, behavior: Policy, target: Policy, candidates) -> float:
    """Pick the bandwidth minimizing leave-one-out squared error at t=1.

    The criterion is the LOO risk of predicting each trajectory's lambda_0
    from the smoother at its own s_1.  On ties (including duplicates) the
    first candidate wins.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no bandwidth candidates supplied")
    lam0 = lambda_matrix(train, behavior, target)[:, 0]
    s1 = np.atleast_2d(np.asarray(train.states_at(1), dtype=float))
    best, best_risk = candidates[0], np.inf
    for h in candidates:
        if h <= 0:
            raise NonpositiveBandwidth(f"bandwidth must be positive, got {h}")
        k = _epanechnikov_weights(s1, s1, h)
        np.fill_diagonal(k, 0.0)
        mass = k.sum(axis=1)
        pred = np.divide(k @ lam0, mass, out=np.zeros(len(s1)), where=mass > 0)
        risk = float(np.mean((pred - lam0) ** 2))
        if risk < best_risk:
            best, best_risk = h, risk
    return best


class LeastSquaresMuRatio(_RatioBase):
    """Direct linear model of the marginal ratio on state-action features."""

    kind = "ls_mu"

    def __init__(self, features: FeatureMap, coefs: np.ndarray, clip_bound=None):
        self.features = features
        self.coefs = np.asarray(coefs, dtype=float)
        self.clip_bound = clip_bound

    def mu(self, t, states, actions):
        return self._clip(self.features(t, states, actions) @ self.coefs[t])

    def weights(self, data: Dataset) -> np.ndarray:
        out = np.empty((data.n, data.horizon + 1))
        for t in range(data.horizon + 1):
            out[:, t] = self.mu(t, data.states_at(t), data.actions[:, t])
        return out

    def to_config(self):
        return {
            "model": "ls_mu",
            "features": self.features.to_config(),
            "coefs": self.coefs.tolist(),
            "clip_bound": self.clip_bound,
        }


def fit_mu_ls(
    train: Dataset,
    behavior: Policy,
    target: Policy,
    features: FeatureMap,
    ridge: float = 1e-8,
    clip_bound=None,
) -> LeastSquaresMuRatio:
    """Regress the cumulative ratio lambda_t on features of (s_t, a_t)."""
    lam = lambda_matrix(train, behavior, target)
    T = train.horizon
    coefs = np.zeros((T + 1, features.dim))
    for t in range(T + 1):
        s, a = train.states_at(t), train.actions[:, t]
        if isinstance(features, TabularOneHotFeatures):
            cells = features.cell_index(s, a)
            counts = np.bincount(cells, minlength=features.dim).astype(float)
            if ridge == 0.0 and (counts == 0).any():
                raise SingularDesign("unvisited state-action cells with zero ridge")
            coefs[t] = np.bincount(cells, weights=lam[:, t], minlength=features.dim) / (
                counts + ridge
            )
        else:
            coefs[t] = _ridge_solve(features(t, s, a), lam[:, t], ridge)
    return LeastSquaresMuRatio(features, coefs, clip_bound)


def mu_from_w(wmodel, behavior: Policy, target: Policy, t: int, s, a: int) -> float:
    """Scalar marginal ratio eta_t(s, a) * w_hat_t(s), clipped to [0, C']."""
    pb = behavior.prob(t, s, a)
    pe = target.prob(t, s, a)
    if pb == 0.0:
        if pe == 0.0:
            return 0.0
        raise OverlapViolation(f"behavior assigns zero mass to action {a} at t={t}")
    w = float(np.asarray(wmodel.w(t, np.asarray([s]))).reshape(-1)[0])
    hi = np.inf if wmodel.clip_bound is None else wmodel.clip_bound
    return float(np.clip(pe / pb * w, 0.0, hi))


def ratio_model_from_config(cfg: dict):
    kind = cfg["model"]
    if kind == "known_lambda":
        return KnownLambdaRatio(
            policy_from_config(cfg["behavior"]), policy_from_config(cfg["target"])
        )
    if kind == "histogram_w":
        return HistogramWRatio(
            np.array(cfg["table"]),
            policy_from_config(cfg["behavior"]),
            policy_from_config(cfg["target"]),
            cfg.get("clip_bound"),
        )
    if kind == "kernel_w":
        return KernelWRatio(
            [np.array(p) for p in cfg["points"]],
            [np.array(v) for v in cfg["lam_prev"]],
            cfg["bandwidth"],
            policy_from_config(cfg["behavior"]),
            policy_from_config(cfg["target"]),
            cfg.get("clip_bound"),
        )
    if kind == "ls_mu":
        return LeastSquaresMuRatio(
            feature_map_from_config(cfg["features"]), np.array(cfg["coefs"]), cfg.get("clip_bound")
        )
    raise ValueError(f"unknown ratio model: {kind!r}")
