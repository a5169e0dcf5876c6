"""Policy-value estimators: importance sampling, direct, marginalized, and
the doubly robust constructions (cross-fitted and no-split variants).

All estimators reduce to an average of per-trajectory contributions; the
reported standard error is the plug-in SD of those contributions over
sqrt(n), which is diagnostic rather than the benchmark's error measure.
"""
from __future__ import annotations

import numpy as np

from .core import Dataset, FoldAssignment, PolicyValueEstimate, assign_folds, lambda_matrix
from .errors import FoldLeakage
from .nuisance import KnownLambdaRatio
from .policies import Policy

__all__ = [
    "OracleQ",
    "NuisanceSet",
    "is_estimate",
    "dm_estimate",
    "mis_estimate",
    "drl_m1",
    "drl_m2",
    "dr_adaptive_m1",
    "dr_adaptive_m2",
    "ESTIMATOR_NAMES",
]

ESTIMATOR_NAMES = (
    "is",
    "dm",
    "mis",
    "drl_m1",
    "drl_m2",
    "dr_adaptive_m1",
    "dr_adaptive_m2",
)


class OracleQ:
    """Adapter exposing a dense (T+1, S, A) q-table through the model API."""

    def __init__(self, q_table: np.ndarray):
        self.q_table = np.asarray(q_table, dtype=float)

    def q(self, t, states, actions):
        return self.q_table[t][np.asarray(states, dtype=int), np.asarray(actions, dtype=int)]

    def v(self, t, states, target: Policy):
        s = np.asarray(states, dtype=int)
        return (target.action_probs(t, s) * self.q_table[t][s]).sum(axis=1)


class ZeroQ:
    """q identically zero; turns the doubly robust formula into pure weighting."""

    def q(self, t, states, actions):
        return np.zeros(len(np.atleast_1d(actions)))

    def v(self, t, states, target):
        return np.zeros(len(np.atleast_1d(states)))


def _estimate_from_values(values: np.ndarray, name: str) -> PolicyValueEstimate:
    n = len(values)
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return PolicyValueEstimate(float(values.mean()), se, n, name)


def is_estimate(
    data: Dataset, behavior: Policy, target: Policy, alternative: bool = False
) -> PolicyValueEstimate:
    """Importance sampling: mean of sum_t lambda_t r_t.

    ``alternative=True`` uses the higher-variance form lambda_T * sum_t r_t,
    kept only for variance-comparison tests.
    """
    lam = lambda_matrix(data, behavior, target)
    if alternative:
        values = lam[:, -1] * data.rewards.sum(axis=1)
    else:
        values = (lam * data.rewards).sum(axis=1)
    return _estimate_from_values(values, "is")


def dm_estimate(data: Dataset, q0, target: Policy) -> PolicyValueEstimate:
    """Direct method: mean of the fitted initial value v_hat_0(s_0)."""
    return _estimate_from_values(q0.v(0, data.states_at(0), target), "dm")


def mis_estimate(data: Dataset, ratio) -> PolicyValueEstimate:
    """Marginalized importance sampling: mean of sum_t mu_hat_t r_t."""
    values = (ratio.weights(data) * data.rewards).sum(axis=1)
    return _estimate_from_values(values, "mis")


def dr_values(data: Dataset, target: Policy, q_model, ratio_weights: np.ndarray) -> np.ndarray:
    """Per-trajectory doubly robust contributions.

    sum_t [w_t (r_t - q_hat_t) + w_{t-1} v_hat_t] with w_{-1} = 1; the same
    formula serves both the history-dependent and Markov variants, the only
    difference being which weights are plugged in.
    """
    n, T1 = data.actions.shape
    prev = np.concatenate([np.ones((n, 1)), ratio_weights[:, :-1]], axis=1)
    out = np.zeros(n)
    for t in range(T1):
        s = data.states_at(t)
        qs = q_model.q(t, s, data.actions[:, t])
        vs = q_model.v(t, s, target)
        out += ratio_weights[:, t] * (data.rewards[:, t] - qs) + prev[:, t] * vs
    return out


class NuisanceSet:
    """Per-fold nuisances with their fold assignment and training index sets.

    Construction records which trajectories each fold's models were fitted
    on; evaluation refuses to score a fold whose models saw any of its own
    trajectories during training.
    """

    def __init__(self, folds: FoldAssignment, q_models, ratio_models, train_indices):
        self.folds = folds
        self.q_models = list(q_models)
        self.ratio_models = list(ratio_models)
        self.train_indices = [np.asarray(ix) for ix in train_indices]

    @classmethod
    def fit(cls, data: Dataset, folds: FoldAssignment, q_fitter, ratio_fitter) -> "NuisanceSet":
        q_models, ratio_models, train_sets = [], [], []
        for j in range(1, folds.K + 1):
            train_idx = folds.complement_indices(j)
            train = data.subset(train_idx)
            q_models.append(q_fitter(train))
            ratio_models.append(ratio_fitter(train))
            train_sets.append(train_idx)
        return cls(folds, q_models, ratio_models, train_sets)

    def check_no_leakage(self) -> None:
        for j in range(1, self.folds.K + 1):
            overlap = np.intersect1d(self.train_indices[j - 1], self.folds.fold_indices(j))
            if overlap.size:
                raise FoldLeakage(
                    f"fold {j} nuisances were trained on {overlap.size} of their own trajectories"
                )


def _cross_fitted(data: Dataset, target: Policy, nuisances: NuisanceSet, name: str):
    nuisances.check_no_leakage()
    values = np.empty(data.n)
    for j in range(1, nuisances.folds.K + 1):
        idx = nuisances.folds.fold_indices(j)
        fold_data = data.subset(idx)
        weights = nuisances.ratio_models[j - 1].weights(fold_data)
        values[idx] = dr_values(fold_data, target, nuisances.q_models[j - 1], weights)
    return _estimate_from_values(values, name)


def drl_m1(
    data: Dataset,
    behavior: Policy,
    target: Policy,
    q_fitter,
    ratio_fitter=None,
    K: int = 2,
    seed=0,
) -> PolicyValueEstimate:
    """Cross-fitted doubly robust estimator with cumulative-ratio weights.

    ``q_fitter(train) -> q-model``; ``ratio_fitter`` defaults to the exact
    cumulative ratio from the known policies (no fitting needed).
    """
    if ratio_fitter is None:
        ratio_fitter = lambda train: KnownLambdaRatio(behavior, target)
    folds = assign_folds(data.n, K, seed)
    nuis = NuisanceSet.fit(data, folds, q_fitter, ratio_fitter)
    return _cross_fitted(data, target, nuis, "drl_m1")


def drl_m2(
    data: Dataset,
    behavior: Policy,
    target: Policy,
    q_fitter,
    mu_fitter,
    K: int = 2,
    seed=0,
) -> PolicyValueEstimate:
    """Cross-fitted doubly robust estimator with marginal-ratio weights."""
    folds = assign_folds(data.n, K, seed)
    nuis = NuisanceSet.fit(data, folds, q_fitter, mu_fitter)
    return _cross_fitted(data, target, nuis, "drl_m2")


def dr_adaptive_m1(
    data: Dataset, behavior: Policy, target: Policy, qhat, lambdahat=None
) -> PolicyValueEstimate:
    """No-split doubly robust value with one nuisance set fitted on all data."""
    ratio = lambdahat if lambdahat is not None else KnownLambdaRatio(behavior, target)
    values = dr_values(data, target, qhat, ratio.weights(data))
    return _estimate_from_values(values, "dr_adaptive_m1")


def dr_adaptive_m2(data: Dataset, target: Policy, qhat, muhat) -> PolicyValueEstimate:
    values = dr_values(data, target, qhat, muhat.weights(data))
    return _estimate_from_values(values, "dr_adaptive_m2")
