"""Ground-truth machinery for finite-state models.

Exact q/v tables by backward dynamic programming, exact state-marginal and
marginal-ratio tables by forward recursion, influence-function evaluators,
and Monte Carlo efficiency-bound estimates.  Everything here is meant to be
independent of the fitted-nuisance code so it can serve as an oracle in
tests and benchmarks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import Dataset, SpaceSpec, Trajectory, eta_matrix, lambda_matrix
from .errors import BoundViolated, OverlapViolation
from .policies import Policy

__all__ = [
    "TabularMDPSpec",
    "DPResult",
    "dp_q",
    "state_marginals",
    "exact_w",
    "exact_mu",
    "eif_m1",
    "eif_m2",
    "eif_m1_values",
    "eif_m2_values",
    "mis_influence_values",
    "MCBound",
    "effbound_mc",
    "effbound_pair",
    "mis_gap_mc",
    "horizon_bound_check",
    "HorizonBoundReport",
    "approx_q_rollouts",
]


def _sample_rows(prob_rows, rng):
    """Sample one index per row of a (n, K) matrix of row distributions."""
    u = rng.random(len(prob_rows))
    cum = np.cumsum(prob_rows, axis=1)
    return np.minimum((cum < u[:, None]).sum(axis=1), prob_rows.shape[1] - 1)


@dataclass
class TabularMDPSpec:
    """Finite MDP with explicit tables, usable directly as an environment.

    transitions[s, a, s'] and reward_probs[s, a, k] (over reward_values[k])
    are stationary in time; the horizon is the index of the last decision,
    so trajectories contain T+1 (state, action, reward) triples.
    """

    horizon: int
    initial: np.ndarray
    transitions: np.ndarray
    reward_values: np.ndarray
    reward_probs: np.ndarray

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.reward_values = np.asarray(self.reward_values, dtype=float)
        self.reward_probs = np.asarray(self.reward_probs, dtype=float)
        S, A, S2 = self.transitions.shape
        if S2 != S or self.initial.shape != (S,):
            raise ValueError("transition table must be (S, A, S)")
        if self.reward_probs.shape != (S, A, len(self.reward_values)):
            raise ValueError("reward_probs must be (S, A, len(reward_values))")
        for name, table in [
            ("initial", self.initial[None, :]),
            ("transitions", self.transitions.reshape(S * A, S)),
            ("reward_probs", self.reward_probs.reshape(S * A, -1)),
        ]:
            sums = table.sum(axis=1)
            if np.max(np.abs(sums - 1.0)) > 1e-12:
                raise ValueError(f"{name} rows must sum to 1 within 1e-12")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def space(self) -> SpaceSpec:
        return SpaceSpec(self.horizon, self.n_actions, n_states=self.n_states)

    @property
    def reward_bounds(self):
        return float(self.reward_values.min()), float(self.reward_values.max())

    def mean_rewards(self) -> np.ndarray:
        """(S, A) table of E[r | s, a]."""
        return self.reward_probs @ self.reward_values

    # environment protocol, so envs.simulate works on a spec directly
    def initial_states(self, n, rng):
        return _sample_rows(np.tile(self.initial, (n, 1)), rng)

    def step(self, t, states, actions, rng):
        rewards = self.reward_values[_sample_rows(self.reward_probs[states, actions], rng)]
        nxt = _sample_rows(self.transitions[states, actions], rng)
        return rewards, nxt

    def shifted(self, offset: float) -> "TabularMDPSpec":
        """Same dynamics with every reward value shifted by ``offset``."""
        return TabularMDPSpec(
            self.horizon,
            self.initial,
            self.transitions,
            self.reward_values + offset,
            self.reward_probs,
        )

    def to_json(self, path) -> None:
        doc = {
            "horizon": self.horizon,
            "initial": self.initial.tolist(),
            "transitions": self.transitions.tolist(),
            "reward_values": self.reward_values.tolist(),
            "reward_probs": self.reward_probs.tolist(),
        }
        with open(path, "w") as f:
            json.dump(doc, f)

    @staticmethod
    def from_json(path) -> "TabularMDPSpec":
        with open(path) as f:
            doc = json.load(f)
        return TabularMDPSpec(
            doc["horizon"],
            np.array(doc["initial"]),
            np.array(doc["transitions"]),
            np.array(doc["reward_values"]),
            np.array(doc["reward_probs"]),
        )

    @staticmethod
    def random(
        seed,
        n_states: int = 3,
        n_actions: int = 2,
        horizon: int = 4,
        n_reward_values: int = 2,
    ) -> "TabularMDPSpec":
        """Random dense spec with all probabilities bounded away from zero."""
        rng = np.random.default_rng(seed)

        def rows(*shape):
            x = rng.uniform(0.1, 1.0, size=shape)
            return x / x.sum(axis=-1, keepdims=True)

        return TabularMDPSpec(
            horizon,
            rows(n_states),
            rows(n_states, n_actions, n_states),
            np.sort(rng.uniform(-1.0, 1.0, size=n_reward_values)),
            rows(n_states, n_actions, n_reward_values),
        )


@dataclass
class DPResult:
    """Exact q/v tables: q is (T+1, S, A), v is (T+2, S) with v[T+1] = 0."""

    q: np.ndarray
    v: np.ndarray
    rho: float


def dp_q(spec: TabularMDPSpec, target: Policy) -> DPResult:
    """Backward recursion: q_t = E[r | s, a] + P v_{t+1}, v_t = E_target[q_t]."""
    T, S, A = spec.horizon, spec.n_states, spec.n_actions
    rbar = spec.mean_rewards()
    q = np.zeros((T + 1, S, A))
    v = np.zeros((T + 2, S))
    for t in range(T, -1, -1):
        q[t] = rbar + spec.transitions @ v[t + 1]
        probs = target.action_probs(t, np.arange(S))
        v[t] = (probs * q[t]).sum(axis=1)
    return DPResult(q, v, float(spec.initial @ v[0]))


def state_marginals(spec: TabularMDPSpec, policy: Policy) -> np.ndarray:
    """(T+1, S) table of the state distribution at each step under ``policy``."""
    T, S = spec.horizon, spec.n_states
    p = np.zeros((T + 1, S))
    p[0] = spec.initial
    for t in range(T):
        joint = p[t][:, None] * policy.action_probs(t, np.arange(S))
        p[t + 1] = np.einsum("sa,sak->k", joint, spec.transitions)
    return p


def exact_w(spec: TabularMDPSpec, behavior: Policy, target: Policy) -> np.ndarray:
    """(T+1, S) table of w_t(s) = p_target,t(s) / p_behavior,t(s).

    States the behavior policy never reaches get w = 0 when the target can't
    reach them either; if the target reaches them, the ratio is undefined and
    OverlapViolation is raised.
    """
    pe = state_marginals(spec, target)
    pb = state_marginals(spec, behavior)
    bad = (pb == 0) & (pe > 0)
    if bad.any():
        t, s = np.argwhere(bad)[0]
        raise OverlapViolation(f"target visits state {s} at t={t} but behavior never does")
    return np.divide(pe, pb, out=np.zeros_like(pe), where=pb > 0)


def exact_mu(spec: TabularMDPSpec, behavior: Policy, target: Policy) -> np.ndarray:
    """(T+1, S, A) table of the state-action marginal ratio mu_t = eta_t * w_t."""
    w = exact_w(spec, behavior, target)
    S = spec.n_states
    mu = np.zeros((spec.horizon + 1, S, spec.n_actions))
    for t in range(spec.horizon + 1):
        pe = target.action_probs(t, np.arange(S))
        pb = behavior.action_probs(t, np.arange(S))
        reachable = w[t] > 0
        bad = reachable[:, None] & (pb == 0) & (pe > 0)
        if bad.any():
            s, a = np.argwhere(bad)[0]
            raise OverlapViolation(f"action {a} in state {s} at t={t} has zero behavior mass")
        eta = np.divide(pe, pb, out=np.zeros_like(pe), where=pb > 0)
        mu[t] = eta * w[t][:, None]
    return mu


def _qv_along(data: Dataset, q_table: np.ndarray, target: Policy):
    """Per-trajectory q_t(s_t, a_t) and v_t(s_t) lookups, each (n, T+1)."""
    n, T1 = data.actions.shape
    qs = np.empty((n, T1))
    vs = np.empty((n, T1))
    for t in range(T1):
        s = data.states_at(t)
        qs[:, t] = q_table[t][s, data.actions[:, t]]
        vs[:, t] = (target.action_probs(t, s) * q_table[t][s]).sum(axis=1)
    return qs, vs


def eif_m1_values(
    data: Dataset, behavior: Policy, target: Policy, q_table: np.ndarray, rho: float
) -> np.ndarray:
    """Per-trajectory efficient influence values for the history-dependent model."""
    lam = lambda_matrix(data, behavior, target)
    lam_prev = np.concatenate([np.ones((data.n, 1)), lam[:, :-1]], axis=1)
    qs, vs = _qv_along(data, q_table, target)
    return (lam * (data.rewards - qs) + lam_prev * vs).sum(axis=1) - rho


def eif_m2_values(
    data: Dataset,
    behavior: Policy,
    target: Policy,
    q_table: np.ndarray,
    mu_table: np.ndarray,
    rho: float,
) -> np.ndarray:
    """Per-trajectory efficient influence values for the Markov model."""
    n, T1 = data.actions.shape
    mu = np.empty((n, T1))
    for t in range(T1):
        mu[:, t] = mu_table[t][data.states_at(t), data.actions[:, t]]
    mu_prev = np.concatenate([np.ones((n, 1)), mu[:, :-1]], axis=1)
    qs, vs = _qv_along(data, q_table, target)
    return (mu * (data.rewards - qs) + mu_prev * vs).sum(axis=1) - rho


def eif_m1(traj: Trajectory, behavior: Policy, target: Policy, q_table, rho: float) -> float:
    """Single-trajectory influence value; table lookups on integer states."""
    data = Dataset.from_trajectories(
        SpaceSpec(traj.horizon, q_table.shape[2], n_states=q_table.shape[1]), [traj]
    )
    return float(eif_m1_values(data, behavior, target, q_table, rho)[0])


def eif_m2(traj, behavior, target, q_table, mu_table, rho: float) -> float:
    data = Dataset.from_trajectories(
        SpaceSpec(traj.horizon, q_table.shape[2], n_states=q_table.shape[1]), [traj]
    )
    return float(eif_m2_values(data, behavior, target, q_table, mu_table, rho)[0])


def mis_influence_values(
    data: Dataset,
    behavior: Policy,
    target: Policy,
    rbar: np.ndarray,
    w_table: np.ndarray,
) -> np.ndarray:
    """Per-trajectory influence values of the marginalized ratio estimator.

    sum_t [mu_t r_t + (lambda_{t-1} - w_t(s_t)) * E_target[r_t | s_t]], using
    exact w and the exact one-step mean reward table rbar (S, A).
    """
    lam = lambda_matrix(data, behavior, target)
    lam_prev = np.concatenate([np.ones((data.n, 1)), lam[:, :-1]], axis=1)
    eta = eta_matrix(data, behavior, target)
    n, T1 = data.actions.shape
    out = np.zeros(n)
    for t in range(T1):
        s = data.states_at(t)
        mu_t = eta[:, t] * w_table[t][s]
        rbar_e = (target.action_probs(t, s) * rbar[s]).sum(axis=1)
        out += mu_t * data.rewards[:, t] + (lam_prev[:, t] - w_table[t][s]) * rbar_e
    return out


@dataclass
class MCBound:
    """Monte Carlo variance estimate with a moment-based standard error."""

    value: float
    std_error: float
    n: int


def _variance_with_se(values: np.ndarray) -> MCBound:
    n = len(values)
    c = values - values.mean()
    m2 = float((c**2).mean())
    m4 = float((c**4).mean())
    se = float(np.sqrt(max(m4 - m2**2, 0.0) / n))
    return MCBound(m2 * n / (n - 1), se, n)


def _simulate(spec, behavior, n_mc, seed) -> Dataset:
    from .envs import simulate

    return simulate(spec, behavior, n_mc, seed)


def _eif_values(spec, behavior, target, model, data):
    dp = dp_q(spec, target)
    if model == "M1":
        return eif_m1_values(data, behavior, target, dp.q, dp.rho)
    if model == "M2":
        mu = exact_mu(spec, behavior, target)
        return eif_m2_values(data, behavior, target, dp.q, mu, dp.rho)
    raise ValueError(f"model must be 'M1' or 'M2', got {model!r}")


def effbound_mc(spec, behavior, target, model: str, n_mc: int, seed) -> MCBound:
    """Efficiency bound as the sample variance of the exact influence values.

    Accepts a TabularMDPSpec, or any environment object for model='M1' if an
    oracle q-function is attached via ``approx_q_rollouts``.
    """
    data = _simulate(spec, behavior, n_mc, seed)
    return _variance_with_se(_eif_values(spec, behavior, target, model, data))


def effbound_pair(spec, behavior, target, n_mc: int, seed):
    """Both bounds from one shared sample, plus the SE of their difference.

    Returns (bound_m1, bound_m2, diff_se): pairing the samples makes the
    M2 <= M1 ordering testable at far smaller n than independent runs.
    """
    data = _simulate(spec, behavior, n_mc, seed)
    e1 = _eif_values(spec, behavior, target, "M1", data)
    e2 = _eif_values(spec, behavior, target, "M2", data)
    b1, b2 = _variance_with_se(e1), _variance_with_se(e2)
    d = (e1 - e1.mean()) ** 2 - (e2 - e2.mean()) ** 2
    diff_se = float(d.std(ddof=1) / np.sqrt(n_mc))
    return b1, b2, diff_se


def mis_gap_mc(spec, behavior, target, n_mc: int, seed) -> MCBound:
    """Excess asymptotic variance of the marginalized ratio estimator.

    The influence function of the ratio estimator differs from the efficient
    one by a component orthogonal to the tangent space, so the variance gap
    equals the variance of the difference of the two influence functions.
    This evaluates that difference per trajectory, with exact w from the
    forward recursion and exact q/v from dynamic programming, and returns its
    Monte Carlo variance.  Nonnegative by construction.
    """
    data = _simulate(spec, behavior, n_mc, seed)
    dp = dp_q(spec, target)
    mu = exact_mu(spec, behavior, target)
    w = exact_w(spec, behavior, target)
    phi = mis_influence_values(data, behavior, target, spec.mean_rewards(), w)
    eif = eif_m2_values(data, behavior, target, dp.q, mu, dp.rho)
    return _variance_with_se(phi - eif)


@dataclass
class HorizonBoundReport:
    """Crude horizon-scaling guarantees evaluated against Monte Carlo bounds."""

    effbd_m1: MCBound
    effbd_m2: MCBound
    c: float
    c_prime: float
    r_max: float
    bound_m1: float
    bound_m2: float


def horizon_bound_check(spec, behavior, target, n_mc: int = 20000, seed=0) -> HorizonBoundReport:
    """Check EffBd(M2) <= C' R^2 (T+1)^2 and EffBd(M1) <= C^(T+1) R^2 (T+1)^2.

    C bounds the per-step ratio eta and C' the marginal ratio mu; rewards are
    shifted to be nonnegative first (R is the shifted maximum, i.e. the range
    width).  Raises BoundViolated if a bound fails beyond 4 standard errors.
    """
    lo, hi = spec.reward_bounds
    shifted = spec.shifted(-lo)
    S = spec.n_states
    c = 0.0
    for t in range(spec.horizon + 1):
        pe = target.action_probs(t, np.arange(S))
        pb = behavior.action_probs(t, np.arange(S))
        eta = np.divide(pe, pb, out=np.zeros_like(pe), where=pb > 0)
        c = max(c, float(eta.max()))
    c_prime = float(exact_mu(spec, behavior, target).max())
    r_max = hi - lo
    T1 = spec.horizon + 1
    bound_m1 = c**T1 * r_max**2 * T1**2
    bound_m2 = c_prime * r_max**2 * T1**2
    b1 = effbound_mc(shifted, behavior, target, "M1", n_mc, seed)
    b2 = effbound_mc(shifted, behavior, target, "M2", n_mc, seed)
    if b1.value > bound_m1 + 4 * b1.std_error:
        raise BoundViolated(f"history-model bound violated: {b1.value} > {bound_m1}")
    if b2.value > bound_m2 + 4 * b2.std_error:
        raise BoundViolated(f"Markov-model bound violated: {b2.value} > {bound_m2}")
    return HorizonBoundReport(b1, b2, c, c_prime, r_max, bound_m1, bound_m2)


def approx_q_rollouts(env, target: Policy, n_rollouts: int, seed, degree: int = 3):
    """Approximate oracle q for a continuous-state env by rollout regression.

    Simulates n_rollouts on-policy trajectories, computes reward-to-go, and
    fits a per-(t, action) polynomial regression of degree ``degree`` in the
    state.  Returns (q_fn, rho) where q_fn(t, states, actions) -> values.
    This is an approximation; callers should fold its error into tolerances.
    """
    from .envs import simulate

    data = simulate(env, target, n_rollouts, seed)
    T1 = env.space.horizon + 1
    rtg = np.cumsum(data.rewards[:, ::-1], axis=1)[:, ::-1]
    A = env.space.n_actions

    def poly(x):
        cols = [np.ones(len(x))]
        for d in range(1, degree + 1):
            cols.extend((x**d).T)
        return np.column_stack(cols)

    coefs = {}
    for t in range(T1):
        X = poly(data.states_at(t))
        for a in range(A):
            m = data.actions[:, t] == a
            if m.sum() < X.shape[1]:
                coefs[(t, a)] = None
                continue
            beta, *_ = np.linalg.lstsq(X[m], rtg[m, t], rcond=None)
            coefs[(t, a)] = beta
    fallback = rtg.mean(axis=0)

    def q_fn(t, states, actions):
        X = poly(np.atleast_2d(states))
        out = np.full(len(X), fallback[t])
        for a in range(A):
            beta = coefs[(t, a)]
            m = np.asarray(actions) == a
            if beta is not None and m.any():
                out[m] = X[m] @ beta
        return out

    return q_fn, float(rtg[:, 0].mean())
